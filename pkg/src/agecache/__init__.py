"""Queue-aware cache update scheduling toolkit.

Exact average-cost MDP solving, from-scratch DQN training, and seeded
rollout evaluation for deciding when to refresh cached contents so that
served requests see fresh data at minimal refresh cost.
"""

__version__ = "0.1.0"

from .kernels import BACKEND_NAME

__all__ = ["BACKEND_NAME", "__version__"]
