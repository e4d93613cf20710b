"""Deep-RL stock trading engine: indicators, market MDP, CNN/MLP actor-critics, PPO."""

__version__ = "0.1.0"
