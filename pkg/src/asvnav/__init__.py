"""Multi-robot navigation in vortical currents: simulator, classical and learned policies, training and evaluation."""

__version__ = "0.1.0"
