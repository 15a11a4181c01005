"""Numpy implementations of the hot-loop kernels.

Same contracts as the compiled backend in ``_native.pyx``; used when the
extension is unavailable or when AGECACHE_BACKEND=numpy.  The sequential
walks (rollout, power iteration on tiny chains) are plain Python loops
here, which is exactly why the compiled twin exists.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

NAME = "numpy"

# dense transition matrices are cheap to build and iterate below this size
_DENSE_STATE_LIMIT = 1024


def rvia_solve(succ_base, offsets, probs, aoi_cost, eta, ref, span_tol, max_sweeps):
    """Relative value iteration over the flat-indexed kernel.

    Uses the damped update h <- h/2 + (T h - (T h)(ref))/2 (the standard
    aperiodicity transformation: plain RVIA oscillates when the greedy
    policy induces a periodic chain, e.g. age thresholds) and stops when
    the span of (T h - h) drops below ``span_tol``.  Returns the
    pre-update h of the converged sweep together with g = (T h)(ref) and
    the greedy actions, so the Bellman residual max|T h - h - g| of the
    returned triple is bounded by the final span.
    """
    num_states, num_actions = succ_base.shape
    jidx = succ_base[:, :, None] + offsets[None, None, :]
    cost = aoi_cost[:, None] + eta * (np.arange(num_actions) > 0).astype(np.float64)[None, :]
    h = np.zeros(num_states, dtype=np.float64)
    sweep = 0
    while sweep < max_sweeps:
        sweep += 1
        q = cost + h[jidx] @ probs
        w = q.min(axis=1)
        g = float(w[ref])
        diff = w - h
        span = float(diff.max() - diff.min())
        if span < span_tol:
            return h, g, q.argmin(axis=1).astype(np.int64), sweep, span, True
        h = 0.5 * h + 0.5 * (w - g)
    q = cost + h[jidx] @ probs
    w = q.min(axis=1)
    g = float(w[ref])
    diff = w - h
    span = float(diff.max() - diff.min())
    return h, g, q.argmin(axis=1).astype(np.int64), sweep, span, False


def stationary(succ, probs, start, tol, max_iter):
    """Stationary distribution of the chain reached from ``start``.

    ``succ[s, m]`` is the successor for arrival draw m (probability
    ``probs[m]``) under a fixed policy.  Iterates the half-lazy chain
    mu <- mu/2 + (mu P)/2, which has the same stationary distribution but
    stays convergent for periodic policies (age-threshold policies cycle
    deterministically).  Stops when the L1 change of mu drops below
    ``tol``; mass never leaves the states reachable from ``start``.
    """
    num_states, num_draws = succ.shape
    if num_states <= _DENSE_STATE_LIMIT:
        pt = np.zeros((num_states, num_states), dtype=np.float64)
        np.add.at(pt, (succ.ravel(), np.repeat(np.arange(num_states), num_draws)),
                  np.tile(probs, num_states))
    else:
        pt = sp.coo_matrix(
            (
                np.tile(probs, num_states),
                (succ.ravel(), np.repeat(np.arange(num_states), num_draws)),
            ),
            shape=(num_states, num_states),
        ).tocsr()
    mu = np.zeros(num_states, dtype=np.float64)
    mu[start] = 1.0
    for it in range(1, max_iter + 1):
        nxt = 0.5 * mu + 0.5 * (pt @ mu)
        delta = float(np.abs(nxt - mu).sum())
        mu = nxt
        if delta < tol:
            mu /= mu.sum()
            return mu, it, True
    return mu / mu.sum(), max_iter, False


def rollout_walk(succ_base, slot_offsets, table_actions, override_mask,
                 override_actions, aoi_load, served, start, burn_in):
    """Walk T slots of the indexed chain, accruing served-age/update totals.

    The action in slot t is ``override_actions[t]`` where ``override_mask``
    is set, else ``table_actions[state]``.  Accrual starts at ``burn_in``.
    Returns (sum of served-age load, served count, update count, end state).
    """
    horizon = slot_offsets.shape[0]
    sb = succ_base.tolist()
    ta = table_actions.tolist()
    om = override_mask.tolist()
    oa = override_actions.tolist()
    so = slot_offsets.tolist()
    load = aoi_load.tolist()
    srv = served.tolist()
    s = int(start)
    total_load = 0.0
    total_served = 0
    updates = 0
    for t in range(horizon):
        a = oa[t] if om[t] else ta[s]
        if t >= burn_in:
            total_load += load[s]
            total_served += srv[s]
            if a > 0:
                updates += 1
        s = sb[s][a] + so[t]
    return total_load, total_served, updates, s


def dqn_batch_update(dims, theta, feats, actions, targets, beta):
    """One SGD step on the batch-mean squared TD error; mutates ``theta``.

    ``dims`` is the layer-size vector (input, hidden..., output); ``theta``
    the flat parameter vector laid out W then b per layer.  Gradients flow
    only through the predicted value of each sample's chosen action; the
    targets are precomputed scalars.  Returns the mean loss.
    """
    batch = feats.shape[0]
    weights, biases = _views(dims, theta)
    acts = [feats]
    pre = []
    for layer, (w, b) in enumerate(zip(weights, biases)):
        z = acts[-1] @ w + b
        pre.append(z)
        acts.append(np.maximum(z, 0.0) if layer < len(weights) - 1 else z)
    out = acts[-1]
    rows = np.arange(batch)
    err = out[rows, actions] - targets
    loss = float(0.5 * np.mean(err * err))

    delta = np.zeros_like(out)
    delta[rows, actions] = err / batch
    for layer in range(len(weights) - 1, -1, -1):
        grad_w = acts[layer].T @ delta
        grad_b = delta.sum(axis=0)
        if layer > 0:
            # propagate through the pre-update weights
            delta = delta @ weights[layer].T
            delta[pre[layer - 1] <= 0.0] = 0.0
        weights[layer] -= beta * grad_w
        biases[layer] -= beta * grad_b
    return loss


def _views(dims, theta):
    """Per-layer (W, b) views into the flat parameter vector."""
    weights = []
    biases = []
    off = 0
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = theta[off : off + fan_in * fan_out].reshape(fan_in, fan_out)
        off += fan_in * fan_out
        b = theta[off : off + fan_out]
        off += fan_out
        weights.append(w)
        biases.append(b)
    return weights, biases
