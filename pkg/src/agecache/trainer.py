"""Average-cost DQN: ε-greedy interaction, replay, target network, SGD.

The learned objective is the reference-anchored temporal-difference error
of an average-cost MDP: the bootstrap target of a transition is
``cost + min_u V(next; target) - min_u V(ref; target)``, with gradients
flowing only through the policy network's value of the taken action.
Training runs as one continuing trajectory; episodes are bookkeeping
windows for the cost trace, not environment resets.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels, neural
from .agents import EpsilonSchedule, TablePolicy, epsilon_at
from .model import (
    ModelConfig,
    SystemState,
    initial_state,
    make_rng,
    space_for,
)


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the step index for diagnostics."""


@dataclass(frozen=True)
class TrainerConfig:
    num_episodes: int = 200
    steps_per_episode: int = 3000
    target_sync_interval: int = 3000
    batch_size: int = 1000
    learning_rate: float = 0.01
    epsilon: EpsilonSchedule = field(default_factory=lambda: EpsilonSchedule(0.0, 0.99, 200.0))
    replay_capacity: int = 10_000
    seed: int = 0

    def __post_init__(self):
        for name in ("num_episodes", "steps_per_episode", "target_sync_interval", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.replay_capacity < self.batch_size:
            raise ValueError("replay_capacity must be >= batch_size")

    @property
    def total_steps(self) -> int:
        return self.num_episodes * self.steps_per_episode

    @classmethod
    def from_mapping(cls, mapping: dict) -> "TrainerConfig":
        """Optional keys: n_epi, t_epi, t_update, k_batch, beta, eps_min,
        eps_max, eps_decay, replay_capacity, seed."""
        def get(key, cast, default):
            return cast(mapping[key]) if key in mapping else default

        schedule = EpsilonSchedule(
            get("eps_min", float, 0.0),
            get("eps_max", float, 0.99),
            get("eps_decay", float, 200.0),
        )
        return cls(
            num_episodes=get("n_epi", int, 200),
            steps_per_episode=get("t_epi", int, 3000),
            target_sync_interval=get("t_update", int, 3000),
            batch_size=get("k_batch", int, 1000),
            learning_rate=get("beta", float, 0.01),
            epsilon=schedule,
            replay_capacity=get("replay_capacity", int, 10_000),
            seed=get("seed", int, 0),
        )


@dataclass(frozen=True)
class TransitionTuple:
    state: SystemState
    action: int
    cost: float
    next_state: SystemState


class ReplayBuffer:
    """Ring of transitions with FIFO eviction; stores state indices."""

    def __init__(self, capacity: int, config: ModelConfig):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.config = config
        self._space = space_for(config)
        self.states = np.zeros(capacity, dtype=np.int64)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.costs = np.zeros(capacity, dtype=np.float64)
        self.next_states = np.zeros(capacity, dtype=np.int64)
        self._cursor = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push_indices(self, state: int, action: int, cost: float, next_state: int) -> None:
        i = self._cursor
        self.states[i] = state
        self.actions[i] = action
        self.costs[i] = cost
        self.next_states[i] = next_state
        self._cursor = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def push(self, transition: TransitionTuple) -> None:
        self.push_indices(
            self._space.encode(transition.state),
            transition.action,
            transition.cost,
            self._space.encode(transition.next_state),
        )

    def sample_positions(self, k: int, rng: np.random.Generator) -> np.ndarray:
        """Uniform without replacement over the stored transitions."""
        if k > self._size:
            raise ValueError(f"cannot sample {k} of {self._size} stored transitions")
        return rng.choice(self._size, size=k, replace=False, shuffle=False)

    def sample(self, k: int, rng: np.random.Generator) -> list[TransitionTuple]:
        pos = self.sample_positions(k, rng)
        return [
            TransitionTuple(
                state=self._space.decode(int(self.states[i])),
                action=int(self.actions[i]),
                cost=float(self.costs[i]),
                next_state=self._space.decode(int(self.next_states[i])),
            )
            for i in pos
        ]


def loss(
    shape: neural.NetworkShape,
    theta: np.ndarray,
    theta_target: np.ndarray,
    transition: TransitionTuple,
    reference_state: SystemState,
    config: ModelConfig,
) -> tuple[float, float]:
    """Single-transition TD loss and the upstream scalar for backprop.

    The target term is computed from the target parameters and receives no
    gradient; the upstream scalar (prediction - target) multiplies the
    gradient of the chosen action's predicted value.
    """
    x_next = neural.state_features(transition.next_state, config)
    x_ref = neural.state_features(reference_state, config)
    target = (
        transition.cost
        + float(neural.forward(shape, theta_target, x_next).min())
        - float(neural.forward(shape, theta_target, x_ref).min())
    )
    x = neural.state_features(transition.state, config)
    prediction = float(neural.forward(shape, theta, x)[transition.action])
    err = prediction - target
    return 0.5 * err * err, err


@dataclass
class TrainingTrace:
    episode_costs: np.ndarray      # mean stage cost per episode
    episode_losses: np.ndarray     # mean TD loss per episode (nan until updates start)
    wall_time: float
    theta: np.ndarray
    theta_target: np.ndarray
    shape: neural.NetworkShape
    model_config: ModelConfig
    trainer_config: TrainerConfig
    backend: str


class _TargetValueCache:
    """min-over-actions target values per state, valid between target syncs.

    The target network is frozen between syncs and states are enumerable,
    so each state's bootstrap value is computed once per sync period.
    """

    def __init__(self, shape, features):
        self.shape = shape
        self.features = features
        self.values = np.zeros(features.shape[0], dtype=np.float64)
        self.known = np.zeros(features.shape[0], dtype=bool)

    def invalidate(self):
        self.known[:] = False

    def lookup(self, theta_target, indices):
        missing = np.unique(indices[~self.known[indices]])
        if missing.size:
            vals = neural.forward_batch(self.shape, theta_target, self.features[missing])
            self.values[missing] = vals.min(axis=1)
            self.known[missing] = True
        return self.values[indices]


def train(model_config: ModelConfig, trainer_config: TrainerConfig) -> TrainingTrace:
    """Run the full interaction/replay/SGD loop; see module docstring.

    Deterministic given the trainer seed: the seed spawns independent
    streams for arrivals, exploration, replay sampling, and weight init.
    """
    started = time.perf_counter()
    space = space_for(model_config)
    tables = space.tables()
    features = neural.features_matrix(model_config)
    shape = neural.NetworkShape.for_model(model_config)
    eta = model_config.update_weight
    num_actions = model_config.num_actions

    arrivals_ss, policy_ss, replay_ss, init_ss = np.random.SeedSequence(
        trainer_config.seed
    ).spawn(4)
    rng_arrivals = np.random.Generator(np.random.PCG64(arrivals_ss))
    rng_policy = np.random.Generator(np.random.PCG64(policy_ss))
    rng_replay = np.random.Generator(np.random.PCG64(replay_ss))
    rng_init = np.random.Generator(np.random.PCG64(init_ss))

    theta = neural.init_uniform(shape, rng_init)
    theta_target = neural.copy_parameters(theta)
    target_cache = _TargetValueCache(shape, features)
    dims = np.asarray(shape.dims, dtype=np.int64)

    buffer = ReplayBuffer(trainer_config.replay_capacity, model_config)
    ref_idx = space.encode(initial_state(model_config))
    aoi_cost = tables.aoi_cost()
    succ_base = tables.succ_base
    cdfs = space.arrival_cdfs
    gw = [space.weights[f * space.digits_per_content + space.digits_per_content - 1]
          for f in range(model_config.num_contents)]

    state = ref_idx
    episode_costs = np.zeros(trainer_config.num_episodes)
    episode_losses = np.full(trainer_config.num_episodes, np.nan)
    cost_acc = 0.0
    loss_acc = 0.0
    loss_count = 0
    episode = 0

    for t in range(trainer_config.total_steps):
        eps = epsilon_at(trainer_config.epsilon, t)
        coin = rng_policy.random()
        candidate = int(rng_policy.random() * num_actions)
        if coin < eps:
            action = candidate
        else:
            values = neural.forward(shape, theta, features[state])
            action = int(np.argmin(values))

        cost = aoi_cost[state] + (eta if action > 0 else 0.0)
        offset = 0
        for f in range(model_config.num_contents):
            draw = min(
                int(np.searchsorted(cdfs[f], rng_arrivals.random(), side="right")),
                model_config.users[f],
            )
            offset += draw * gw[f]
        next_state = int(succ_base[state, action]) + offset
        buffer.push_indices(state, action, cost, next_state)

        if len(buffer) >= trainer_config.batch_size:
            pos = buffer.sample_positions(trainer_config.batch_size, rng_replay)
            targets = (
                buffer.costs[pos]
                + target_cache.lookup(theta_target, buffer.next_states[pos])
                - target_cache.lookup(theta_target, np.asarray([ref_idx]))[0]
            )
            batch_loss = kernels.dqn_batch_update(
                dims,
                theta,
                np.ascontiguousarray(features[buffer.states[pos]]),
                np.ascontiguousarray(buffer.actions[pos]),
                np.ascontiguousarray(targets),
                trainer_config.learning_rate,
            )
            if not np.isfinite(batch_loss):
                raise TrainingDiverged(
                    f"non-finite loss at step {t} (episode {episode}, eta={eta})"
                )
            loss_acc += batch_loss
            loss_count += 1

        if t % trainer_config.target_sync_interval == 0:
            theta_target[:] = theta
            target_cache.invalidate()

        cost_acc += cost
        state = next_state
        if (t + 1) % trainer_config.steps_per_episode == 0:
            episode_costs[episode] = cost_acc / trainer_config.steps_per_episode
            if loss_count:
                episode_losses[episode] = loss_acc / loss_count
            cost_acc = 0.0
            loss_acc = 0.0
            loss_count = 0
            episode += 1

    return TrainingTrace(
        episode_costs=episode_costs,
        episode_losses=episode_losses,
        wall_time=time.perf_counter() - started,
        theta=theta,
        theta_target=theta_target,
        shape=shape,
        model_config=model_config,
        trainer_config=trainer_config,
        backend=kernels.BACKEND_NAME,
    )


def extract_greedy_policy(
    shape: neural.NetworkShape, theta: np.ndarray, config: ModelConfig
) -> TablePolicy:
    """Tabulate argmin-value actions over the whole space (ties -> smallest)."""
    values = neural.forward_batch(shape, theta, neural.features_matrix(config))
    return TablePolicy(values.argmin(axis=1).astype(np.int64), config)


def trace_to_csv(path, trace: TrainingTrace, header_lines: list[str] | None = None) -> None:
    """Per-episode cost trace: ``episode,avg_cost`` plus comment header."""
    lines = list(header_lines or [])
    lines.append("episode,avg_cost")
    for i, c in enumerate(trace.episode_costs):
        lines.append(f"{i},{c:.17g}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
