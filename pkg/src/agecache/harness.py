"""Rollout evaluation, η sweeps, and the age-vs-frequency frontier.

Metrics follow the objective's decomposition: the served-age total is
normalized by expected arrivals (the realized-arrival normalization is
reported alongside), the refresh count by the horizon, and the average
cost is exactly ``avg_aoi + eta * update_freq``.  Sweeps re-solve the
table policies per η and aggregate rollouts over a shared seed list, so
policies are compared under common random numbers.
"""

from __future__ import annotations

import concurrent.futures
import multiprocessing
from dataclasses import dataclass

import numpy as np

from . import kernels
from .agents import Policy, TablePolicy
from .model import (
    ModelConfig,
    config_hash,
    initial_state,
    make_rng,
    space_for,
)
from .solver import (
    SolverError,
    SolverSettings,
    policy_average_cost,
    rvia,
    solve_periodic_baseline,
)

DEFAULT_ETA_GRID = (0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0)
DEFAULT_BURN_IN = 100


@dataclass(frozen=True)
class RolloutMetrics:
    horizon: int
    burn_in: int
    eta: float
    total_served_aoi: float
    expected_arrivals: float
    realized_served: int
    updates: int
    avg_aoi_expected_norm: float
    avg_aoi_realized_norm: float
    update_freq: float
    avg_cost: float


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return make_rng(int(rng))


def _arrival_offsets_for_slots(config: ModelConfig, horizon: int, rng) -> np.ndarray:
    """Pre-draw per-slot joint arrival index offsets (one uniform per content)."""
    space = space_for(config)
    k = space.digits_per_content
    uniforms = rng.random((horizon, config.num_contents))
    offsets = np.zeros(horizon, dtype=np.int64)
    for f in range(config.num_contents):
        draws = np.minimum(
            np.searchsorted(space.arrival_cdfs[f], uniforms[:, f], side="right"),
            config.users[f],
        )
        offsets += draws * space.weights[f * k + k - 1]
    return offsets


def rollout(
    policy: Policy,
    config: ModelConfig,
    horizon: int,
    rng,
    burn_in: int = DEFAULT_BURN_IN,
) -> RolloutMetrics:
    """Simulate ``horizon`` slots from the canonical start state.

    The passed generator (or seed) spawns one child stream for arrivals
    and one for the policy, so table policies and randomized policies see
    identical arrival sequences under the same seed.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if not 0 <= burn_in < horizon:
        raise ValueError("burn_in must lie in [0, horizon)")
    rng = _as_rng(rng)
    rng_arrivals, rng_policy = rng.spawn(2)
    space = space_for(config)
    tables = space.tables()
    policy.reset()
    start = space.encode(initial_state(config))

    plan = policy.rollout_plan(space, horizon, rng_policy)
    slot_offsets = _arrival_offsets_for_slots(config, horizon, rng_arrivals)
    if plan is not None:
        table, mask, override = plan
        total_load, served, updates, _ = kernels.rollout_walk(
            tables.succ_base,
            slot_offsets,
            np.ascontiguousarray(table, dtype=np.int64),
            np.ascontiguousarray(mask, dtype=np.uint8),
            np.ascontiguousarray(override, dtype=np.int64),
            tables.aoi_load,
            tables.served,
            start,
            burn_in,
        )
    else:
        total_load, served, updates = 0.0, 0, 0
        state = start
        succ_base = tables.succ_base
        for t in range(horizon):
            action = policy.act(space.decode(state), rng_policy)
            if t >= burn_in:
                total_load += float(tables.aoi_load[state])
                served += int(tables.served[state])
                updates += action > 0
            state = int(succ_base[state, action]) + int(slot_offsets[t])

    window = horizon - burn_in
    expected = window * tables.norm
    avg_aoi = total_load / expected
    freq = updates / window
    return RolloutMetrics(
        horizon=horizon,
        burn_in=burn_in,
        eta=config.update_weight,
        total_served_aoi=total_load,
        expected_arrivals=expected,
        realized_served=int(served),
        updates=int(updates),
        avg_aoi_expected_norm=avg_aoi,
        avg_aoi_realized_norm=total_load / served if served else float("nan"),
        update_freq=freq,
        avg_cost=avg_aoi + config.update_weight * freq,
    )


def rollout_trace(policy: Policy, config: ModelConfig, horizon: int, rng):
    """Slot-by-slot (state_index, action, arrival_offset) record for tests."""
    rng = _as_rng(rng)
    rng_arrivals, rng_policy = rng.spawn(2)
    space = space_for(config)
    tables = space.tables()
    policy.reset()
    slot_offsets = _arrival_offsets_for_slots(config, horizon, rng_arrivals)
    state = space.encode(initial_state(config))
    records = []
    for t in range(horizon):
        action = policy.act(space.decode(state), rng_policy)
        records.append((state, action, int(slot_offsets[t])))
        state = int(tables.succ_base[state, action]) + int(slot_offsets[t])
    return records


@dataclass(frozen=True)
class SweepRow:
    eta: float
    policy: str
    seed_count: int
    avg_aoi_mean: float
    avg_aoi_std: float
    update_freq_mean: float
    update_freq_std: float
    avg_cost_mean: float
    avg_cost_std: float


@dataclass
class SweepResult:
    rows: list[SweepRow]
    config: ModelConfig
    seeds: tuple[int, ...]
    horizon: int
    burn_in: int
    method: str  # "mc" or "exact"


def solve_sweep_tables(
    config: ModelConfig,
    eta_grid,
    kinds=("optimal", "baseline"),
    settings: SolverSettings | None = None,
) -> dict:
    """Re-solve the table policies for every η (the fee shapes the optimum)."""
    out = {}
    for eta in eta_grid:
        cfg = config.with_update_weight(float(eta))
        for kind in kinds:
            if kind == "optimal":
                table = rvia(cfg, settings)
                if not table.converged:
                    raise SolverError(f"rvia did not converge at eta={eta}")
                out[(float(eta), kind)] = table.actions
            elif kind == "baseline":
                baseline = solve_periodic_baseline(cfg, settings)
                if not baseline.reduced.converged:
                    raise SolverError(f"window=0 solve did not converge at eta={eta}")
                out[(float(eta), kind)] = baseline.lifted_actions
            else:
                raise ValueError(f"unknown built-in policy kind {kind!r}")
    return out


def _mc_cell(args):
    config, eta, kind, actions, seeds, horizon, burn_in = args
    cfg = config.with_update_weight(eta)
    policy = TablePolicy(actions, cfg)
    aoi = np.empty(len(seeds))
    freq = np.empty(len(seeds))
    cost = np.empty(len(seeds))
    for i, seed in enumerate(seeds):
        m = rollout(policy, cfg, horizon, make_rng(seed), burn_in)
        aoi[i] = m.avg_aoi_expected_norm
        freq[i] = m.update_freq
        cost[i] = m.avg_cost
    return eta, kind, aoi, freq, cost


def _std(x: np.ndarray) -> float:
    return float(np.std(x, ddof=1)) if x.size > 1 else 0.0


def sweep(
    config: ModelConfig,
    eta_grid=DEFAULT_ETA_GRID,
    policy_tables: dict | None = None,
    kinds=("optimal", "baseline"),
    seeds=tuple(range(30)),
    horizon: int = 10_000,
    burn_in: int = DEFAULT_BURN_IN,
    method: str = "mc",
    jobs: int = 1,
    settings: SolverSettings | None = None,
) -> SweepResult:
    """Aggregate metrics per (η, policy) over the seed list.

    ``policy_tables`` maps (eta, kind) to an action table; built-in kinds
    are solved on demand for any missing pair.  ``method="exact"`` skips
    the rollouts and evaluates each table through its stationary
    distribution instead (seed_count 0, stds 0).
    """
    if not len(eta_grid):
        raise ValueError("eta grid must be nonempty")
    if method not in ("mc", "exact"):
        raise ValueError(f"unknown sweep method {method!r}")
    tables = dict(policy_tables or {})
    builtin = [k for k in kinds if k in ("optimal", "baseline")]
    missing_etas = [
        eta for eta in eta_grid
        if any((float(eta), kind) not in tables for kind in builtin)
    ]
    if missing_etas:
        tables.update(solve_sweep_tables(config, missing_etas, builtin, settings))
    all_kinds = list(dict.fromkeys(list(kinds) + [k for (_, k) in tables]))

    rows = []
    if method == "exact":
        for eta in eta_grid:
            cfg = config.with_update_weight(float(eta))
            for kind in all_kinds:
                key = (float(eta), kind)
                if key not in tables:
                    continue
                cost, aoi, freq = policy_average_cost(cfg, tables[key])
                rows.append(SweepRow(float(eta), kind, 0, aoi, 0.0, freq, 0.0, cost, 0.0))
        return SweepResult(rows, config, tuple(), horizon, burn_in, "exact")

    cells = [
        (config, float(eta), kind, tables[(float(eta), kind)], tuple(seeds), horizon, burn_in)
        for eta in eta_grid
        for kind in all_kinds
        if (float(eta), kind) in tables
    ]
    if jobs > 1:
        ctx = multiprocessing.get_context("spawn")
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as pool:
            results = list(pool.map(_mc_cell, cells))
    else:
        results = [_mc_cell(cell) for cell in cells]
    for eta, kind, aoi, freq, cost in results:
        rows.append(
            SweepRow(
                eta,
                kind,
                len(seeds),
                float(aoi.mean()),
                _std(aoi),
                float(freq.mean()),
                _std(freq),
                float(cost.mean()),
                _std(cost),
            )
        )
    rows.sort(key=lambda r: (r.eta, r.policy))
    return SweepResult(rows, config, tuple(seeds), horizon, burn_in, "mc")


def frontier(result: SweepResult, kind: str) -> np.ndarray:
    """(update_freq, avg_aoi) pairs sorted by frequency, lower age on ties."""
    pts = sorted(
        ((r.update_freq_mean, r.avg_aoi_mean) for r in result.rows if r.policy == kind)
    )
    out = []
    for f, a in pts:
        if out and out[-1][0] == f:
            out[-1][1] = min(out[-1][1], a)
        else:
            out.append([f, a])
    return np.asarray(out, dtype=np.float64)


def matched_frequency_stats(opt_points: np.ndarray, base_points: np.ndarray) -> dict:
    """Compare frontiers at matched frequency via interpolation on the baseline.

    For every optimal-frontier point whose frequency lies inside the
    baseline's range, the baseline age is linearly interpolated; returns
    the maximum relative age reduction and whether the optimal frontier
    weakly dominates everywhere (1e-9 fp slack).
    """
    if len(opt_points) == 0 or len(base_points) < 2:
        raise ValueError("need a nonempty optimal frontier and >= 2 baseline points")
    base_f = base_points[:, 0]
    base_a = base_points[:, 1]
    lo, hi = base_f.min(), base_f.max()
    reductions = []
    dominated = True
    compared = 0
    for f, a in opt_points:
        if not lo <= f <= hi:
            continue
        ref = float(np.interp(f, base_f, base_a))
        compared += 1
        reductions.append((ref - a) / ref)
        if a > ref + 1e-9:
            dominated = False
    return {
        "max_reduction": max(reductions) if reductions else float("nan"),
        "dominates": dominated,
        "compared_points": compared,
    }


def csv_header(config: ModelConfig, seeds, code_version: str) -> list[str]:
    from . import __version__
    from .model import RNG_ALGORITHM

    return [
        f"# config_hash={config_hash(config)}",
        f"# seeds={','.join(str(s) for s in seeds)}",
        f"# code_version={code_version or __version__}",
        f"# backend={kernels.BACKEND_NAME}",
        f"# rng={RNG_ALGORITHM}",
    ]


def write_sweep_csv(path, result: SweepResult, code_version: str = "") -> None:
    lines = csv_header(result.config, result.seeds, code_version)
    lines.append(f"# horizon={result.horizon} burn_in={result.burn_in} method={result.method}")
    lines.append(
        "eta,policy,seed_count,avg_aoi_mean,avg_aoi_std,update_freq_mean,"
        "update_freq_std,avg_cost_mean,avg_cost_std"
    )
    for r in result.rows:
        lines.append(
            f"{r.eta:.17g},{r.policy},{r.seed_count},{r.avg_aoi_mean:.17g},"
            f"{r.avg_aoi_std:.17g},{r.update_freq_mean:.17g},{r.update_freq_std:.17g},"
            f"{r.avg_cost_mean:.17g},{r.avg_cost_std:.17g}"
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_frontier_csv(path, result: SweepResult, code_version: str = "") -> None:
    lines = csv_header(result.config, result.seeds, code_version)
    lines.append("policy,update_freq,avg_aoi")
    for kind in dict.fromkeys(r.policy for r in result.rows):
        for f, a in frontier(result, kind):
            lines.append(f"{kind},{f:.17g},{a:.17g}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
