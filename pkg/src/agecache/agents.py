"""Policies: table lookups, simple baselines, and the ε-greedy wrapper.

Every policy maps a SystemState to an action in [0, F].  Policies that can
be expressed as a flat table or as a precomputed action sequence also
expose a rollout plan so the simulator can run them through the indexed
fast path; the plan consumes the policy RNG stream in exactly the same
order as repeated ``act`` calls, so both paths produce identical
trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ModelConfig, StateSpace, SystemState, space_for


@dataclass(frozen=True)
class EpsilonSchedule:
    """Exponentially decaying exploration rate."""

    minimum: float
    maximum: float
    decay: float

    def __post_init__(self):
        if not 0.0 <= self.minimum <= self.maximum <= 1.0:
            raise ValueError("need 0 <= minimum <= maximum <= 1")
        if self.decay <= 0.0:
            raise ValueError("decay must be positive")


def epsilon_at(schedule: EpsilonSchedule, t: int) -> float:
    """eps_min + (eps_max - eps_min) * exp(-t / decay)."""
    if t < 0:
        raise ValueError("step index must be >= 0")
    return schedule.minimum + (schedule.maximum - schedule.minimum) * math.exp(
        -t / schedule.decay
    )


class Policy:
    """Base contract: act(state, rng) -> action in [0, F]."""

    def act(self, state: SystemState, rng: np.random.Generator) -> int:
        raise NotImplementedError

    def reset(self) -> None:
        """Clear any internal slot counter before a fresh rollout."""

    def tabulate(self, space: StateSpace) -> np.ndarray | None:
        """Deterministic state->action table, if this policy is one."""
        return None

    def rollout_plan(self, space: StateSpace, horizon: int, rng: np.random.Generator):
        """(table, override_mask, override_actions) for the indexed fast path.

        Returns None when the policy cannot be planned ahead; the plan must
        draw from ``rng`` exactly as ``horizon`` successive act() calls
        would.
        """
        table = self.tabulate(space)
        if table is None:
            return None
        mask = np.zeros(horizon, dtype=np.uint8)
        return table, mask, np.zeros(horizon, dtype=np.int64)


class TablePolicy(Policy):
    """Flat action table indexed by the encoded state."""

    def __init__(self, actions: np.ndarray, config: ModelConfig):
        actions = np.ascontiguousarray(actions, dtype=np.int64)
        if actions.shape != (config.state_count,):
            raise ValueError("action table does not cover the state space")
        if actions.min() < 0 or actions.max() > config.num_contents:
            raise ValueError("action table contains out-of-range actions")
        self.actions = actions
        self.config = config
        self._space = space_for(config)

    def act(self, state: SystemState, rng: np.random.Generator) -> int:
        return int(self.actions[self._space.encode(state)])

    def tabulate(self, space: StateSpace) -> np.ndarray:
        if space.size != self.actions.shape[0]:
            raise ValueError("table was built for a different state space")
        return self.actions


class IdlePolicy(Policy):
    """Never refreshes anything."""

    def act(self, state: SystemState, rng: np.random.Generator) -> int:
        return 0

    def tabulate(self, space: StateSpace) -> np.ndarray:
        return np.zeros(space.size, dtype=np.int64)


class RandomPolicy(Policy):
    """Uniform over all F+1 actions; one uniform draw per call."""

    def __init__(self, config: ModelConfig):
        self.num_actions = config.num_actions

    def act(self, state: SystemState, rng: np.random.Generator) -> int:
        return int(rng.random() * self.num_actions)

    def rollout_plan(self, space, horizon, rng):
        actions = (rng.random(horizon) * self.num_actions).astype(np.int64)
        return (
            np.zeros(space.size, dtype=np.int64),
            np.ones(horizon, dtype=np.uint8),
            actions,
        )


class FixedPeriodPolicy(Policy):
    """Refresh every ``period`` slots regardless of state, starting at slot 0.

    With several contents the refresh slots cycle through them in order.
    """

    def __init__(self, period: int, config: ModelConfig):
        if period < 1:
            raise ValueError("period must be >= 1")
        self.period = period
        self.num_contents = config.num_contents
        self._slot = 0

    def reset(self) -> None:
        self._slot = 0

    def act(self, state: SystemState, rng: np.random.Generator) -> int:
        slot = self._slot
        self._slot += 1
        if slot % self.period:
            return 0
        return 1 + (slot // self.period) % self.num_contents

    def rollout_plan(self, space, horizon, rng):
        slots = np.arange(horizon)
        actions = np.where(
            slots % self.period == 0,
            1 + (slots // self.period) % self.num_contents,
            0,
        ).astype(np.int64)
        return (
            np.zeros(space.size, dtype=np.int64),
            np.ones(horizon, dtype=np.uint8),
            actions,
        )


class EpsilonGreedyPolicy(Policy):
    """With probability eps_t act uniformly at random, else defer to inner.

    The random branch covers all F+1 actions, including whatever the inner
    policy would have picked.  Each call consumes two uniforms (coin and
    candidate) so planned and step-by-step execution stay in sync; the
    step index t advances per call and resets with the policy.
    """

    def __init__(self, inner: Policy, schedule: EpsilonSchedule, config: ModelConfig):
        self.inner = inner
        self.schedule = schedule
        self.num_actions = config.num_actions
        self._t = 0

    def reset(self) -> None:
        self._t = 0
        self.inner.reset()

    def act(self, state: SystemState, rng: np.random.Generator) -> int:
        coin = rng.random()
        candidate = int(rng.random() * self.num_actions)
        eps = epsilon_at(self.schedule, self._t)
        self._t += 1
        if coin < eps:
            return candidate
        return self.inner.act(state, rng)

    def rollout_plan(self, space, horizon, rng):
        table = self.inner.tabulate(space)
        if table is None:
            return None
        draws = rng.random((horizon, 2))
        eps = np.array(
            [epsilon_at(self.schedule, t) for t in range(horizon)], dtype=np.float64
        )
        mask = (draws[:, 0] < eps).astype(np.uint8)
        actions = (draws[:, 1] * self.num_actions).astype(np.int64)
        return table, mask, actions


def age_threshold_table(config: ModelConfig, threshold: int) -> np.ndarray:
    """Single-content table realizing fixed-period refreshing as a state map.

    Refresh exactly when the age reaches ``threshold``: the age then cycles
    1..threshold, one refresh per ``threshold`` slots.
    """
    if config.num_contents != 1:
        raise ValueError("age threshold table is defined for a single content")
    if not 1 <= threshold <= config.aoi_cap:
        raise ValueError("threshold must lie in [1, aoi_cap]")
    space = space_for(config)
    ages = space.digit_column(0) + 1
    return (ages >= threshold).astype(np.int64)
