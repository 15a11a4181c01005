"""Time-slotted cache update MDP: states, transitions, costs, sampling.

The system tracks, for each cached content, the age of the cached copy and
a short look-ahead window of pending user requests (every request is
submitted ``window`` slots before its due slot).  Each slot the controller
either idles or refreshes one content; requests due in the current slot are
served with the age the cache holds at the start of the slot, before any
refresh takes effect.

States are also exposed through a mixed-radix index so that solvers and
simulators can work on flat arrays; ``StateSpace`` owns the bijection and
the precomputed transition tables shared by the solver and the rollout
harness.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

# Identifier of the pseudo-random generator backing every stochastic
# component; recorded in output file headers for reproducibility.
RNG_ALGORITHM = "numpy-PCG64"

Action = int  # 0 = idle, f >= 1 = refresh content f


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic generator from a 64-bit seed (PCG64 stream)."""
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class ModelConfig:
    """Problem parameters.

    ``users`` and ``rates`` have one entry per content; ``update_weight``
    is the cost charged per refresh slot.
    """

    num_contents: int
    window: int
    aoi_cap: int
    users: tuple[int, ...]
    rates: tuple[float, ...]
    update_weight: float

    def __post_init__(self):
        if self.num_contents < 1:
            raise ValueError("num_contents must be >= 1")
        if self.window < 0:
            raise ValueError("window must be >= 0")
        if self.aoi_cap < 1:
            raise ValueError("aoi_cap must be >= 1")
        if self.update_weight < 0:
            raise ValueError("update_weight must be >= 0")
        object.__setattr__(self, "users", tuple(int(n) for n in self.users))
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        if len(self.users) != self.num_contents or len(self.rates) != self.num_contents:
            raise ValueError("users and rates must have one entry per content")
        if any(n < 1 for n in self.users):
            raise ValueError("every content needs at least one user")
        if any(not 0.0 < r < 1.0 for r in self.rates):
            raise ValueError("arrival rates must lie in the open interval (0, 1)")

    @property
    def state_count(self) -> int:
        n = 1
        for users in self.users:
            n *= self.aoi_cap * (users + 1) ** (self.window + 1)
        return n

    @property
    def num_actions(self) -> int:
        return self.num_contents + 1

    @property
    def expected_arrivals_per_slot(self) -> float:
        return float(sum(n * r for n, r in zip(self.users, self.rates)))

    def with_window(self, window: int) -> "ModelConfig":
        return replace(self, window=window)

    def with_update_weight(self, eta: float) -> "ModelConfig":
        return replace(self, update_weight=eta)

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ModelConfig":
        """Build from the documented plain-text config keys.

        Keys: ``F``, ``delta``, ``aoi_cap``, ``users``, ``rates``, ``eta``.
        ``users``/``rates`` accept a scalar (broadcast to all contents) or a
        comma-separated list.  Unrelated keys (``seed``, trainer settings)
        are ignored so one file can configure a whole experiment.
        """
        try:
            num_contents = int(mapping["F"])
            window = int(mapping["delta"])
            aoi_cap = int(mapping["aoi_cap"])
            users = _parse_int_list(mapping["users"], num_contents)
            rates = _parse_float_list(mapping["rates"], num_contents)
            eta = float(mapping.get("eta", 0.0))
        except KeyError as missing:
            raise ValueError(f"config key {missing} is required") from None
        return cls(num_contents, window, aoi_cap, users, rates, eta)

    @classmethod
    def from_file(cls, path) -> "ModelConfig":
        return cls.from_mapping(read_config_file(path))


def read_config_file(path) -> dict:
    """Parse a ``key = value`` text file ('#' starts a comment)."""
    mapping = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        mapping[key.strip()] = value.strip()
    return mapping


def _parse_int_list(value, length: int) -> tuple[int, ...]:
    if isinstance(value, (list, tuple)):
        items = [int(v) for v in value]
    else:
        items = [int(v) for v in str(value).split(",")]
    if len(items) == 1:
        items = items * length
    return tuple(items)


def _parse_float_list(value, length: int) -> tuple[float, ...]:
    if isinstance(value, (list, tuple)):
        items = [float(v) for v in value]
    else:
        items = [float(v) for v in str(value).split(",")]
    if len(items) == 1:
        items = items * length
    return tuple(items)


def config_hash(config: ModelConfig) -> str:
    """Short stable digest of the full parameter set, for file headers."""
    payload = json.dumps(
        {
            "F": config.num_contents,
            "delta": config.window,
            "aoi_cap": config.aoi_cap,
            "users": list(config.users),
            "rates": list(config.rates),
            "eta": config.update_weight,
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:12]


@dataclass(frozen=True)
class PerContentState:
    """Per-content component: cache age, due queues, fresh arrivals.

    ``queues[d]`` counts requests due ``d`` slots from now (d = 0..window-1);
    ``arrivals`` counts requests that just arrived and are due ``window``
    slots from now.  The flattened vector (age, queues..., arrivals) has
    length window + 2.
    """

    age: int
    queues: tuple[int, ...]
    arrivals: int

    def as_tuple(self) -> tuple[int, ...]:
        return (self.age, *self.queues, self.arrivals)


@dataclass(frozen=True)
class SystemState:
    """Joint state across all contents."""

    per_content: tuple[PerContentState, ...]

    def as_tuple(self) -> tuple[int, ...]:
        return tuple(itertools.chain.from_iterable(c.as_tuple() for c in self.per_content))


def validate_state(state: SystemState, config: ModelConfig) -> None:
    if len(state.per_content) != config.num_contents:
        raise ValueError("state has the wrong number of contents")
    for f, comp in enumerate(state.per_content):
        users = config.users[f]
        if not 1 <= comp.age <= config.aoi_cap:
            raise ValueError(f"content {f + 1}: age {comp.age} outside [1, {config.aoi_cap}]")
        if len(comp.queues) != config.window:
            raise ValueError(f"content {f + 1}: expected {config.window} queue slots")
        if any(not 0 <= q <= users for q in comp.queues):
            raise ValueError(f"content {f + 1}: queue count outside [0, {users}]")
        if not 0 <= comp.arrivals <= users:
            raise ValueError(f"content {f + 1}: arrivals outside [0, {users}]")


def initial_state(config: ModelConfig) -> SystemState:
    """Canonical start: every cache fresh (age 1), no pending requests."""
    return SystemState(
        tuple(
            PerContentState(age=1, queues=(0,) * config.window, arrivals=0)
            for _ in range(config.num_contents)
        )
    )


def arrival_pmf(config: ModelConfig, f: int) -> np.ndarray:
    """Distribution of per-slot request arrivals for content f (1-based).

    Entry i is the probability that i of the N_f users submit a request,
    i.e. Binomial(N_f, rate_f).
    """
    if not 1 <= f <= config.num_contents:
        raise ValueError(f"content id {f} outside [1, {config.num_contents}]")
    n = config.users[f - 1]
    p = config.rates[f - 1]
    return np.array(
        [math.comb(n, i) * p**i * (1.0 - p) ** (n - i) for i in range(n + 1)],
        dtype=np.float64,
    )


def advance_aoi(age: int, f: int, action: Action, aoi_cap: int) -> int:
    """Next-slot age of content f: reset to 1 on refresh, else grow, capped."""
    if not 1 <= age <= aoi_cap:
        raise ValueError(f"age {age} outside [1, {aoi_cap}]")
    if action == f:
        return 1
    return min(age + 1, aoi_cap)


def shift_queues(comp: PerContentState) -> tuple[int, ...]:
    """Successor queue vector: everything moves one slot closer to due."""
    return (*comp.queues[1:], comp.arrivals)


def due_count(comp: PerContentState) -> int:
    # with a zero-width window, arrivals are due in the slot they arrive
    return comp.queues[0] if comp.queues else comp.arrivals


def stage_cost(state: SystemState, action: Action, config: ModelConfig) -> float:
    """Per-slot cost: normalized age of all served requests plus refresh fee.

    Serving happens before the refresh takes effect, so the age term uses
    the current state regardless of the action.
    """
    load = sum(comp.age * due_count(comp) for comp in state.per_content)
    cost = load / config.expected_arrivals_per_slot
    if action > 0:
        cost += config.update_weight
    return cost


def _deterministic_successor(
    state: SystemState, action: Action, config: ModelConfig
) -> list[tuple[int, tuple[int, ...]]]:
    """Per-content (next_age, next_queues) pairs; only arrivals stay random."""
    parts = []
    for f, comp in enumerate(state.per_content, start=1):
        parts.append((advance_aoi(comp.age, f, action, config.aoi_cap), shift_queues(comp)))
    return parts


def transition_distribution(
    state: SystemState, action: Action, config: ModelConfig
) -> list[tuple[SystemState, float]]:
    """All successors with nonzero probability and their probabilities.

    There are exactly prod_f (N_f + 1) of them: ages and queues move
    deterministically, only the fresh-arrival counts are random.
    """
    validate_state(state, config)
    if not 0 <= action <= config.num_contents:
        raise ValueError(f"action {action} outside [0, {config.num_contents}]")
    parts = _deterministic_successor(state, action, config)
    pmfs = [arrival_pmf(config, f) for f in range(1, config.num_contents + 1)]
    out = []
    for draws in itertools.product(*(range(n + 1) for n in config.users)):
        prob = 1.0
        contents = []
        for f in range(config.num_contents):
            prob *= pmfs[f][draws[f]]
            age, queues = parts[f]
            contents.append(PerContentState(age=age, queues=queues, arrivals=draws[f]))
        out.append((SystemState(tuple(contents)), float(prob)))
    return out


def sample_arrivals(config: ModelConfig, rng: np.random.Generator) -> tuple[int, ...]:
    """One binomial draw per content via inverse CDF on a single uniform.

    Inversion keeps the consumed random stream identical between the
    object-level sampler and the table-driven rollout kernels.
    """
    space = space_for(config)
    # min() guards the fp edge where the cdf tops out a hair below 1.0
    return tuple(
        min(
            int(np.searchsorted(space.arrival_cdfs[f], rng.random(), side="right")),
            config.users[f],
        )
        for f in range(config.num_contents)
    )


def step(
    state: SystemState, action: Action, config: ModelConfig, rng: np.random.Generator
) -> tuple[SystemState, float]:
    """Apply one slot: cost accrues on the pre-refresh state, then move."""
    validate_state(state, config)
    if not 0 <= action <= config.num_contents:
        raise ValueError(f"action {action} outside [0, {config.num_contents}]")
    cost = stage_cost(state, action, config)
    parts = _deterministic_successor(state, action, config)
    draws = sample_arrivals(config, rng)
    contents = tuple(
        PerContentState(age=parts[f][0], queues=parts[f][1], arrivals=draws[f])
        for f in range(config.num_contents)
    )
    return SystemState(contents), cost


class StateSpace:
    """Mixed-radix bijection between system states and [0, state_count).

    Digit order is the flattened state tuple (age first, then queues, then
    arrivals, content by content) with the first digit most significant, so
    the index is strictly monotone in lexicographic state order.
    """

    def __init__(self, config: ModelConfig):
        self.config = config
        radices = []
        for users in config.users:
            radices.append(config.aoi_cap)
            radices.extend([users + 1] * (config.window + 1))
        self.radices = np.asarray(radices, dtype=np.int64)
        weights = np.ones(len(radices), dtype=np.int64)
        for i in range(len(radices) - 2, -1, -1):
            weights[i] = weights[i + 1] * radices[i + 1]
        self.weights = weights
        self.size = int(weights[0] * radices[0])
        self.digits_per_content = config.window + 2
        self.arrival_pmfs = [arrival_pmf(config, f) for f in range(1, config.num_contents + 1)]
        self.arrival_cdfs = [np.cumsum(p) for p in self.arrival_pmfs]

    def encode(self, state: SystemState) -> int:
        validate_state(state, self.config)
        digits = np.asarray(state.as_tuple(), dtype=np.int64)
        digits[:: self.digits_per_content] -= 1  # ages are 1-based
        return int(digits @ self.weights)

    def decode(self, idx: int) -> SystemState:
        if not 0 <= idx < self.size:
            raise ValueError(f"state index {idx} outside [0, {self.size})")
        digits = (idx // self.weights) % self.radices
        contents = []
        k = self.digits_per_content
        for f in range(self.config.num_contents):
            block = digits[f * k : (f + 1) * k]
            contents.append(
                PerContentState(
                    age=int(block[0]) + 1,
                    queues=tuple(int(q) for q in block[1:-1]),
                    arrivals=int(block[-1]),
                )
            )
        return SystemState(tuple(contents))

    def digit_column(self, position: int) -> np.ndarray:
        """Digit value at one position for every state index (vectorized)."""
        idx = np.arange(self.size, dtype=np.int64)
        return (idx // self.weights[position]) % self.radices[position]

    def tables(self) -> "TransitionTables":
        return _tables_for(self.config)


@lru_cache(maxsize=None)
def space_for(config: ModelConfig) -> StateSpace:
    return StateSpace(config)


def encode_state(state: SystemState, config: ModelConfig) -> int:
    return space_for(config).encode(state)


def decode_state(idx: int, config: ModelConfig) -> SystemState:
    return space_for(config).decode(idx)


@dataclass(frozen=True)
class TransitionTables:
    """Flat-array view of the kernel, shared by solver and simulator.

    ``succ_base[s, u]`` is the successor index with all arrival digits zero;
    adding ``arrival_offsets[m]`` lands on the successor for the m-th joint
    arrival draw (probability ``arrival_probs[m]``).  ``aoi_load[s]`` is the
    unnormalized served-age sum of state s and ``served[s]`` the number of
    requests due, so every stage cost is
    ``aoi_load[s]/norm + eta * (u > 0)``.
    """

    succ_base: np.ndarray       # (S, F+1) int64
    arrival_offsets: np.ndarray  # (M,) int64
    arrival_probs: np.ndarray    # (M,) float64
    aoi_load: np.ndarray         # (S,) float64
    served: np.ndarray           # (S,) int64
    norm: float
    update_flag: np.ndarray = field(repr=False, default=None)  # (F+1,) float64

    @property
    def num_states(self) -> int:
        return self.succ_base.shape[0]

    @property
    def num_actions(self) -> int:
        return self.succ_base.shape[1]

    def aoi_cost(self) -> np.ndarray:
        return self.aoi_load / self.norm

    def stage_costs(self, eta: float) -> np.ndarray:
        """(S, F+1) matrix of stage costs at refresh fee eta."""
        return self.aoi_cost()[:, None] + eta * self.update_flag[None, :]


@lru_cache(maxsize=None)
def _tables_for(config: ModelConfig) -> TransitionTables:
    space = space_for(config)
    k = space.digits_per_content
    num_f = config.num_contents
    size = space.size

    ages = []
    due = []
    for f in range(num_f):
        age_digit = space.digit_column(f * k)
        ages.append(age_digit + 1)
        # position f*k+1 holds queue 0 when window >= 1, else the arrivals digit
        due.append(space.digit_column(f * k + 1))
    aoi_load = np.zeros(size, dtype=np.float64)
    served = np.zeros(size, dtype=np.int64)
    for f in range(num_f):
        aoi_load += ages[f] * due[f]
        served += due[f]

    # deterministic successor with arrival digits zeroed, per action
    succ_base = np.zeros((size, num_f + 1), dtype=np.int64)
    shifted = np.zeros(size, dtype=np.int64)
    for f in range(num_f):
        base_pos = f * k
        for d in range(1, config.window + 1):  # queue digit d takes digit d+1's value
            shifted += space.digit_column(base_pos + d + 1) * space.weights[base_pos + d]
    for action in range(num_f + 1):
        idx = shifted.copy()
        for f in range(num_f):
            base_pos = f * k
            age_digit = space.digit_column(base_pos)
            if action == f + 1:
                next_age = np.zeros(size, dtype=np.int64)
            else:
                next_age = np.minimum(age_digit + 1, config.aoi_cap - 1)
            idx += next_age * space.weights[base_pos]
        succ_base[:, action] = idx

    combos = list(itertools.product(*(range(n + 1) for n in config.users)))
    offsets = np.zeros(len(combos), dtype=np.int64)
    probs = np.ones(len(combos), dtype=np.float64)
    for m, draws in enumerate(combos):
        for f in range(num_f):
            offsets[m] += draws[f] * space.weights[f * k + k - 1]
            probs[m] *= space.arrival_pmfs[f][draws[f]]

    update_flag = np.zeros(num_f + 1, dtype=np.float64)
    update_flag[1:] = 1.0
    return TransitionTables(
        succ_base=succ_base,
        arrival_offsets=offsets,
        arrival_probs=probs,
        aoi_load=aoi_load,
        served=served,
        norm=config.expected_arrivals_per_slot,
        update_flag=update_flag,
    )
