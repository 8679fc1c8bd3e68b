"""Goal-space-planning reward shaping for DDPG on a demand-response surrogate."""

__version__ = "0.1.0"
