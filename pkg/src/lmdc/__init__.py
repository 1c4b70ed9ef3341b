"""Ray-aware DDPG mobility control for a loitering-munition drone, with a density benchmark."""

__version__ = "0.1.0"
