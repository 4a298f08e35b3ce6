"""Reinforcement-learning tractography on synthetic phantoms.

Modules: ``volume`` (V1 volumes, interpolation), ``env`` (tracking
environment), ``nn`` (numpy networks and optimisers), ``agents`` (RL
algorithms), ``scoring`` (tractogram metrics) and ``cli``.
"""
__version__ = "0.1.0"
