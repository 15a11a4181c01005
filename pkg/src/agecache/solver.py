"""Exact average-cost solving: relative value iteration and chain evaluation.

``rvia`` computes the optimal stationary policy over the enumerated state
space; ``policy_average_cost`` evaluates any fixed state->action map
exactly through the stationary distribution of its induced chain;
``enumerate_policies_oracle`` brute-forces tiny instances as an
independent check; ``solve_periodic_baseline`` solves the zero-window
reduction whose optimum is the periodic-update heuristic and lifts it back
into the full model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import kernels
from .model import (
    RNG_ALGORITHM,
    ModelConfig,
    config_hash,
    initial_state,
    space_for,
)

MAX_EXACT_STATES = 10_000_000
MAX_ORACLE_POLICIES = 1_000_000

POLICY_FILE_VERSION = 1


class SolverError(RuntimeError):
    """Numerical failure in an exact computation (non-convergence)."""


@dataclass(frozen=True)
class SolverSettings:
    span_tolerance: float = 1e-9
    max_iterations: int = 1_000_000
    reference_state: int | None = None  # defaults to the canonical start state

    def __post_init__(self):
        if self.span_tolerance <= 0:
            raise ValueError("span_tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class PolicyTable:
    """Stationary deterministic policy with its value-iteration artifacts."""

    actions: np.ndarray          # (S,) int64
    avg_cost: float              # g
    relative_values: np.ndarray  # (S,) float64, zero at the reference state
    reference_state: int
    iterations: int
    converged: bool
    span: float
    residual: float
    eta: float
    config: ModelConfig


def _reference_index(config: ModelConfig, settings: SolverSettings) -> int:
    if settings.reference_state is not None:
        if not 0 <= settings.reference_state < config.state_count:
            raise ValueError("reference_state outside the state space")
        return int(settings.reference_state)
    return space_for(config).encode(initial_state(config))


def rvia(config: ModelConfig, settings: SolverSettings | None = None) -> PolicyTable:
    """Optimal policy and optimal average cost by relative value iteration.

    Ties in the Bellman minimization break toward the smallest action
    index, so idling wins over an equally good refresh.  On hitting the
    iteration budget the best iterate is returned with converged=False.
    """
    settings = settings or SolverSettings()
    if config.state_count > MAX_EXACT_STATES:
        raise ValueError(
            f"state space has {config.state_count} states; "
            f"exact solving is guarded at {MAX_EXACT_STATES}"
        )
    tables = space_for(config).tables()
    ref = _reference_index(config, settings)
    aoi_cost = np.ascontiguousarray(tables.aoi_cost())
    h, g, actions, sweeps, span, converged = kernels.rvia_solve(
        tables.succ_base,
        tables.arrival_offsets,
        tables.arrival_probs,
        aoi_cost,
        float(config.update_weight),
        ref,
        float(settings.span_tolerance),
        int(settings.max_iterations),
    )
    residual = bellman_residual(config, h, g)
    return PolicyTable(
        actions=actions,
        avg_cost=float(g),
        relative_values=h,
        reference_state=ref,
        iterations=int(sweeps),
        converged=bool(converged),
        span=float(span),
        residual=float(residual),
        eta=float(config.update_weight),
        config=config,
    )


def bellman_residual(config: ModelConfig, h: np.ndarray, g: float) -> float:
    """max_s |min_u [c(s,u) + E h(s')] - h(s) - g|, recomputed in numpy.

    Independent of the backend that produced h, so it doubles as a check
    of the compiled solver.
    """
    tables = space_for(config).tables()
    jidx = tables.succ_base[:, :, None] + tables.arrival_offsets[None, None, :]
    q = tables.stage_costs(config.update_weight) + h[jidx] @ tables.arrival_probs
    return float(np.abs(q.min(axis=1) - h - g).max())


def as_action_table(policy, config: ModelConfig) -> np.ndarray:
    """Coerce a PolicyTable / array / Policy / callable to an action array."""
    space = space_for(config)
    if isinstance(policy, PolicyTable):
        actions = policy.actions
    elif isinstance(policy, np.ndarray):
        actions = policy
    elif hasattr(policy, "tabulate"):
        actions = policy.tabulate(space)
        if actions is None:
            raise ValueError("policy does not define a deterministic state->action map")
    elif callable(policy):
        actions = np.fromiter(
            (policy(space.decode(i)) for i in range(space.size)), np.int64, space.size
        )
    else:
        raise TypeError(f"cannot interpret {type(policy).__name__} as a policy")
    actions = np.ascontiguousarray(actions, dtype=np.int64)
    if actions.shape != (space.size,):
        raise ValueError(f"policy table must cover all {space.size} states")
    if actions.min() < 0 or actions.max() > config.num_contents:
        raise ValueError("policy table contains out-of-range actions")
    return actions


def policy_average_cost(
    config: ModelConfig,
    policy,
    *,
    tol: float = 1e-12,
    max_iterations: int = 1_000_000,
) -> tuple[float, float, float]:
    """Exact long-run (avg_cost, avg_aoi, update_freq) of a fixed policy.

    Power-iterates the stationary distribution of the induced chain,
    restricted to what is reachable from the canonical start state.
    """
    actions = as_action_table(policy, config)
    space = space_for(config)
    tables = space.tables()
    succ = np.ascontiguousarray(
        tables.succ_base[np.arange(space.size), actions][:, None]
        + tables.arrival_offsets[None, :]
    )
    start = space.encode(initial_state(config))
    mu, iterations, converged = kernels.stationary(
        succ, tables.arrival_probs, start, float(tol), int(max_iterations)
    )
    if not converged:
        raise SolverError(
            f"stationary distribution did not converge within {max_iterations} iterations"
        )
    avg_aoi = float(mu @ tables.aoi_cost())
    update_freq = float(mu[actions > 0].sum())
    avg_cost = avg_aoi + config.update_weight * update_freq
    return avg_cost, avg_aoi, update_freq


def enumerate_policies_oracle(config: ModelConfig) -> tuple[np.ndarray, float]:
    """Brute-force optimum over all stationary deterministic policies.

    Only feasible on tiny instances; guarded at |U|^|S| <= 10^6 policies.
    """
    num_states = config.state_count
    num_actions = config.num_actions
    total = num_actions**num_states
    if total > MAX_ORACLE_POLICIES:
        raise ValueError(
            f"{num_actions}^{num_states} = {total} policies exceeds the "
            f"enumeration guard of {MAX_ORACLE_POLICIES}"
        )
    best_cost = np.inf
    best_actions = None
    actions = np.zeros(num_states, dtype=np.int64)
    for pid in range(total):
        k = pid
        for s in range(num_states):
            actions[s] = k % num_actions
            k //= num_actions
        cost, _, _ = policy_average_cost(config, actions)
        if cost < best_cost:
            best_cost = cost
            best_actions = actions.copy()
    return best_actions, float(best_cost)


@dataclass
class PeriodicBaseline:
    """Zero-window optimum plus its embedding into the full model."""

    reduced: PolicyTable
    reduced_config: ModelConfig
    lifted_actions: np.ndarray  # indexed by the full model's state space


def solve_periodic_baseline(
    config: ModelConfig, settings: SolverSettings | None = None
) -> PeriodicBaseline:
    """Solve the window=0 reduction and lift its policy into the full model.

    The lifted policy reads only the per-content ages: the reduced optimum
    provably ignores the arrival component (refreshing cannot change the
    current slot's served age), which is verified exhaustively here before
    lifting.
    """
    reduced_config = config.with_window(0)
    reduced = rvia(reduced_config, settings)

    space0 = space_for(reduced_config)
    by_age = reduced.actions.reshape(tuple(space0.radices))  # one axis per digit
    # take the zero-arrivals slice: the optimum ignores the arrival counts
    # (the served-age term is common to all actions), so any slice works up
    # to exact ties; near-optimality of the slice is checked below.
    slicer = tuple(
        slice(None) if i % 2 == 0 else 0 for i in range(len(space0.radices))
    )
    collapsed = by_age[slicer]
    # collapsed is now indexed by age digits only, one axis per content

    tables0 = space0.tables()
    jidx = tables0.succ_base[:, :, None] + tables0.arrival_offsets[None, None, :]
    q = tables0.stage_costs(reduced_config.update_weight) + (
        reduced.relative_values[jidx] @ tables0.arrival_probs
    )
    age_only = collapsed[
        tuple(
            space0.digit_column(f * space0.digits_per_content)
            for f in range(reduced_config.num_contents)
        )
    ]
    gap = float((q[np.arange(space0.size), age_only] - q.min(axis=1)).max())
    if gap > 100.0 * (settings or SolverSettings()).span_tolerance:
        raise SolverError(
            f"age-only slice of the reduced policy is suboptimal by {gap:.3e}"
        )

    space = space_for(config)
    age_digits = tuple(
        space.digit_column(f * space.digits_per_content)
        for f in range(config.num_contents)
    )
    lifted = collapsed[age_digits].astype(np.int64)
    return PeriodicBaseline(reduced=reduced, reduced_config=reduced_config, lifted_actions=lifted)


def save_policy(path, table: PolicyTable) -> None:
    """Versioned binary policy file (npz)."""
    cfg = table.config
    np.savez(
        path,
        format_version=POLICY_FILE_VERSION,
        actions=table.actions,
        relative_values=table.relative_values,
        avg_cost=table.avg_cost,
        reference_state=table.reference_state,
        iterations=table.iterations,
        converged=table.converged,
        span=table.span,
        residual=table.residual,
        eta=table.eta,
        config_json=json.dumps(
            {
                "F": cfg.num_contents,
                "delta": cfg.window,
                "aoi_cap": cfg.aoi_cap,
                "users": list(cfg.users),
                "rates": list(cfg.rates),
                "eta": cfg.update_weight,
            }
        ),
        config_hash=config_hash(cfg),
        rng_algorithm=RNG_ALGORITHM,
    )


def load_policy(path) -> PolicyTable:
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != POLICY_FILE_VERSION:
            raise ValueError(f"unsupported policy file version {version}")
        raw = json.loads(str(data["config_json"]))
        config = ModelConfig(
            num_contents=raw["F"],
            window=raw["delta"],
            aoi_cap=raw["aoi_cap"],
            users=tuple(raw["users"]),
            rates=tuple(raw["rates"]),
            update_weight=raw["eta"],
        )
        return PolicyTable(
            actions=data["actions"].astype(np.int64),
            avg_cost=float(data["avg_cost"]),
            relative_values=data["relative_values"].astype(np.float64),
            reference_state=int(data["reference_state"]),
            iterations=int(data["iterations"]),
            converged=bool(data["converged"]),
            span=float(data["span"]),
            residual=float(data["residual"]),
            eta=float(data["eta"]),
            config=config,
        )


def policy_to_csv(path, table: PolicyTable, code_version: str = "") -> None:
    """CSV dump: state_index,action,h_value with a metadata comment header."""
    lines = [
        f"# config_hash={config_hash(table.config)}",
        f"# avg_cost={table.avg_cost:.17g}",
        f"# eta={table.eta:.17g}",
        f"# iterations={table.iterations}",
        f"# span_tolerance_span={table.span:.17g}",
        f"# code_version={code_version}",
        "state_index,action,h_value",
    ]
    for idx in range(table.actions.shape[0]):
        lines.append(
            f"{idx},{int(table.actions[idx])},{table.relative_values[idx]:.17g}"
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
