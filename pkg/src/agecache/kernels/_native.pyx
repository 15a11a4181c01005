# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot-loop kernels; contracts match ``numpy_backend``.

Sequential walks run as plain C loops; the batched network update calls
BLAS dgemm directly to skip per-step dispatch overhead.
"""

import numpy as np

from libc.stdint cimport int64_t, uint8_t
from scipy.linalg.cython_blas cimport dgemm

NAME = "native"


def rvia_solve(succ_base, offsets, probs, aoi_cost, double eta, int64_t ref,
               double span_tol, int64_t max_sweeps):
    cdef int64_t[:, ::1] succ = succ_base
    cdef int64_t[::1] off = offsets
    cdef double[::1] p = probs
    cdef double[::1] cost = aoi_cost
    cdef Py_ssize_t num_states = succ.shape[0]
    cdef Py_ssize_t num_actions = succ.shape[1]
    cdef Py_ssize_t num_draws = off.shape[0]

    h_arr = np.zeros(num_states, dtype=np.float64)
    w_arr = np.zeros(num_states, dtype=np.float64)
    act_arr = np.zeros(num_states, dtype=np.int64)
    cdef double[::1] h = h_arr
    cdef double[::1] w = w_arr
    cdef int64_t[::1] act = act_arr

    cdef Py_ssize_t s, u, m, sweep
    cdef int64_t base, best_u
    cdef double acc, best, g, d, dmin, dmax, span

    sweep = 0
    span = 0.0
    g = 0.0
    while sweep < max_sweeps:
        sweep += 1
        for s in range(num_states):
            best = 0.0
            best_u = 0
            for u in range(num_actions):
                acc = cost[s]
                if u > 0:
                    acc += eta
                base = succ[s, u]
                for m in range(num_draws):
                    acc += p[m] * h[base + off[m]]
                if u == 0 or acc < best:
                    best = acc
                    best_u = u
            w[s] = best
            act[s] = best_u
        g = w[ref]
        dmin = w[0] - h[0]
        dmax = dmin
        for s in range(1, num_states):
            d = w[s] - h[s]
            if d < dmin:
                dmin = d
            elif d > dmax:
                dmax = d
        span = dmax - dmin
        if span < span_tol:
            return h_arr, g, act_arr, sweep, span, True
        # damped update: plain RVIA oscillates on periodic greedy chains
        for s in range(num_states):
            h[s] = 0.5 * h[s] + 0.5 * (w[s] - g)
    return h_arr, g, act_arr, sweep, span, False


def stationary(succ, probs, int64_t start, double tol, int64_t max_iter):
    cdef int64_t[:, ::1] sc = succ
    cdef double[::1] p = probs
    cdef Py_ssize_t num_states = sc.shape[0]
    cdef Py_ssize_t num_draws = sc.shape[1]

    mu_arr = np.zeros(num_states, dtype=np.float64)
    nxt_arr = np.zeros(num_states, dtype=np.float64)
    cdef double[::1] mu = mu_arr
    cdef double[::1] nxt = nxt_arr
    mu[start] = 1.0

    cdef Py_ssize_t s, m, it
    cdef double mass, half, delta, total, d

    for it in range(1, max_iter + 1):
        for s in range(num_states):
            nxt[s] = 0.0
        for s in range(num_states):
            mass = mu[s]
            if mass == 0.0:
                continue
            half = 0.5 * mass
            nxt[s] += half
            for m in range(num_draws):
                nxt[sc[s, m]] += half * p[m]
        delta = 0.0
        for s in range(num_states):
            d = nxt[s] - mu[s]
            delta += d if d >= 0.0 else -d
            mu[s] = nxt[s]
        if delta < tol:
            total = 0.0
            for s in range(num_states):
                total += mu[s]
            for s in range(num_states):
                mu[s] /= total
            return mu_arr, it, True
    total = 0.0
    for s in range(num_states):
        total += mu[s]
    for s in range(num_states):
        mu[s] /= total
    return mu_arr, max_iter, False


def rollout_walk(succ_base, slot_offsets, table_actions, override_mask,
                 override_actions, aoi_load, served, int64_t start, int64_t burn_in):
    cdef int64_t[:, ::1] sb = succ_base
    cdef int64_t[::1] so = slot_offsets
    cdef int64_t[::1] ta = table_actions
    cdef uint8_t[::1] om = override_mask
    cdef int64_t[::1] oa = override_actions
    cdef double[::1] load = aoi_load
    cdef int64_t[::1] srv = served

    cdef Py_ssize_t horizon = so.shape[0]
    cdef int64_t s = start
    cdef int64_t a
    cdef Py_ssize_t t
    cdef double total_load = 0.0
    cdef int64_t total_served = 0
    cdef int64_t updates = 0

    for t in range(horizon):
        a = oa[t] if om[t] else ta[s]
        if t >= burn_in:
            total_load += load[s]
            total_served += srv[s]
            if a > 0:
                updates += 1
        s = sb[s, a] + so[t]
    return total_load, total_served, updates, s


cdef void _gemm_rowmajor_nn(int m, int n, int k, double* a, double* b, double* c) noexcept nogil:
    # C(m,n) = A(m,k) @ B(k,n), all row-major
    cdef char tn = b'N'
    cdef double one = 1.0, zero = 0.0
    dgemm(&tn, &tn, &n, &m, &k, &one, b, &n, a, &k, &zero, c, &n)


cdef void _gemm_rowmajor_tn(int m, int n, int k, double* a, double* b, double* c) noexcept nogil:
    # C(m,n) = A(k,m)^T @ B(k,n), all row-major
    cdef char tn = b'N'
    cdef char tt = b'T'
    cdef double one = 1.0, zero = 0.0
    dgemm(&tn, &tt, &n, &m, &k, &one, b, &n, a, &m, &zero, c, &n)


cdef void _gemm_rowmajor_nt(int m, int n, int k, double* a, double* b, double* c) noexcept nogil:
    # C(m,n) = A(m,k) @ B(n,k)^T, all row-major
    cdef char tn = b'N'
    cdef char tt = b'T'
    cdef double one = 1.0, zero = 0.0
    dgemm(&tt, &tn, &n, &m, &k, &one, b, &k, a, &k, &zero, c, &n)


def dqn_batch_update(dims, theta, feats, actions, targets, double beta):
    cdef int64_t[::1] dm = np.ascontiguousarray(dims, dtype=np.int64)
    cdef double[::1] th = theta
    cdef double[:, ::1] x = feats
    cdef int64_t[::1] act = actions
    cdef double[::1] y = targets

    cdef Py_ssize_t num_layers = dm.shape[0] - 1
    cdef Py_ssize_t batch = x.shape[0]
    cdef Py_ssize_t layer, i, j, r
    cdef int64_t off

    # parameter offsets per layer (W then b)
    offs = np.zeros(num_layers + 1, dtype=np.int64)
    cdef int64_t[::1] ofs = offs
    for layer in range(num_layers):
        ofs[layer + 1] = ofs[layer] + (dm[layer] + 1) * dm[layer + 1]

    acts = [np.ascontiguousarray(feats)]
    cdef double[:, ::1] prev
    cdef double[:, ::1] cur
    cdef Py_ssize_t fan_in, fan_out
    for layer in range(num_layers):
        fan_in = dm[layer]
        fan_out = dm[layer + 1]
        out_arr = np.empty((batch, fan_out), dtype=np.float64)
        prev = acts[layer]
        cur = out_arr
        off = ofs[layer]
        _gemm_rowmajor_nn(<int>batch, <int>fan_out, <int>fan_in,
                          &prev[0, 0], &th[off], &cur[0, 0])
        off += fan_in * fan_out
        if layer < num_layers - 1:
            for i in range(batch):
                for j in range(fan_out):
                    cur[i, j] += th[off + j]
                    if cur[i, j] < 0.0:
                        cur[i, j] = 0.0
        else:
            for i in range(batch):
                for j in range(fan_out):
                    cur[i, j] += th[off + j]
        acts.append(out_arr)

    cdef double[:, ::1] out = acts[num_layers]
    cdef double loss = 0.0
    cdef double err
    delta_arr = np.zeros((batch, dm[num_layers]), dtype=np.float64)
    cdef double[:, ::1] delta = delta_arr
    for i in range(batch):
        err = out[i, act[i]] - y[i]
        loss += 0.5 * err * err
        delta[i, act[i]] = err / batch
    loss /= batch

    cdef double[:, ::1] grad_w
    cdef double[:, ::1] new_delta
    cdef double gb
    for layer in range(num_layers - 1, -1, -1):
        fan_in = dm[layer]
        fan_out = dm[layer + 1]
        off = ofs[layer]
        prev = acts[layer]
        gw_arr = np.empty((fan_in, fan_out), dtype=np.float64)
        grad_w = gw_arr
        _gemm_rowmajor_tn(<int>fan_in, <int>fan_out, <int>batch,
                          &prev[0, 0], &delta[0, 0], &grad_w[0, 0])
        if layer > 0:
            nd_arr = np.empty((batch, fan_in), dtype=np.float64)
            new_delta = nd_arr
            _gemm_rowmajor_nt(<int>batch, <int>fan_in, <int>fan_out,
                              &delta[0, 0], &th[off], &new_delta[0, 0])
            # relu mask: activations are zero exactly where pre-activations <= 0
            for i in range(batch):
                for j in range(fan_in):
                    if prev[i, j] <= 0.0:
                        new_delta[i, j] = 0.0
        # apply the update after delta has propagated through W
        for i in range(fan_in):
            for j in range(fan_out):
                th[off + i * fan_out + j] -= beta * grad_w[i, j]
        off += fan_in * fan_out
        for j in range(fan_out):
            gb = 0.0
            for i in range(batch):
                gb += delta[i, j]
            th[off + j] -= beta * gb
        if layer > 0:
            delta_arr = nd_arr
            delta = new_delta
    return loss
