"""Hot numeric kernels, numba-compiled by default with a pure-python fallback.

Set ``OUTAGEPLAN_BACKEND=numpy`` to force the fallback (or ``numba`` to
require compilation). Both paths execute the same source: the kernels use
only scalar float64/int64 arithmetic on preallocated arrays, and all
randomness is pre-drawn outside, so results are bit-identical whichever
backend runs them.
"""

from __future__ import annotations

import os
import warnings

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - exercised only on stripped installs
    numba = None

_ENV_VAR = "OUTAGEPLAN_BACKEND"


def _resolve_backend() -> str:
    choice = os.environ.get(_ENV_VAR, "").strip().lower()
    if choice in ("", "auto"):
        return "numba" if numba is not None else "numpy"
    if choice not in ("numba", "numpy"):
        raise ValueError(f"{_ENV_VAR} must be 'numba' or 'numpy', got {choice!r}")
    if choice == "numba" and numba is None:
        warnings.warn(f"{_ENV_VAR}=numba requested but numba is not importable; using numpy")
        return "numpy"
    return choice


ACTIVE_BACKEND = _resolve_backend()

_PY_IMPLS: dict = {}
_NB_IMPLS: dict = {}


def _kernel(fn):
    _PY_IMPLS[fn.__name__] = fn
    return fn


def get_impl(name: str, backend: str | None = None):
    """Return the requested kernel; numba variants compile lazily on first call."""
    backend = backend or ACTIVE_BACKEND
    if backend == "numpy":
        return _PY_IMPLS[name]
    if backend != "numba":
        raise ValueError(f"unknown backend {backend!r}")
    if numba is None:
        raise RuntimeError("numba backend requested but numba is not importable")
    if name not in _NB_IMPLS:
        _NB_IMPLS[name] = numba.njit(cache=True)(_PY_IMPLS[name])
    return _NB_IMPLS[name]


@_kernel
def dispatch_span(start_hour, n_hours, demand, pv, class_order, voll, deliverable, power_cap, unserved_out):
    # Hour-by-hour islanded dispatch. PV serves first, storage covers the
    # residual up to its power and remaining-energy limits, and whatever the
    # pool covers goes to classes in descending value-of-lost-load order.
    # `deliverable` is consumed in place; unserved kWh accumulate per class.
    n_classes = demand.shape[0]
    n_units = deliverable.shape[0]
    cost = 0.0
    for h in range(n_hours):
        hh = (start_hour + h) % 8760
        total_load = 0.0
        for ci in range(n_classes):
            total_load += demand[ci, hh]
        pool = pv[hh]
        deficit = total_load - pool
        if deficit > 0.0:
            for u in range(n_units):
                draw = power_cap[u]
                if draw > deliverable[u]:
                    draw = deliverable[u]
                if draw > deficit:
                    draw = deficit
                deliverable[u] -= draw
                pool += draw
                deficit -= draw
                if deficit <= 0.0:
                    break
        for k in range(n_classes):
            ci = class_order[k]
            load = demand[ci, hh]
            served = load
            if served > pool:
                served = pool
            pool -= served
            short = load - served
            unserved_out[ci] += short
            cost += short * voll[ci]
    return cost


@_kernel
def qlearn_chunk(
    q,
    visits,
    state_codes,
    cap_next,
    invest,
    cost_of_cap,
    ladder_sizes,
    price_strides,
    advance_prob,
    horizon,
    p_full,
    c_full,
    gamma,
    uniforms,
    alphas,
    epsilons,
    q_lower,
):
    # One chunk of epsilon-greedy Q-learning episodes. Per step the stream
    # supplies: explore uniform, action uniform (consumed whether or not the
    # step explores), then one uniform per unit for the price walk, so a
    # fixed seed yields the same trajectory on either backend.
    n_episodes = uniforms.shape[0]
    n_units = ladder_sizes.shape[0]
    n_actions = cap_next.shape[1]
    digits = np.zeros(n_units, np.int64)
    max_delta = 0.0
    total_return = 0.0
    violations = 0
    for ep in range(n_episodes):
        alpha = alphas[ep]
        eps = epsilons[ep]
        for u in range(n_units):
            digits[u] = 0
        p = 0
        c = 0
        ep_return = 0.0
        for t in range(horizon):
            code = (t * p_full + p) * c_full + c
            s = np.searchsorted(state_codes, code)
            u_explore = uniforms[ep, t, 0]
            u_action = uniforms[ep, t, 1]
            if u_explore < eps:
                a = int(u_action * n_actions)
                if a >= n_actions:
                    a = n_actions - 1
            else:
                a = 0
                best = q[s, 0]
                for j in range(1, n_actions):
                    if q[s, j] > best:
                        best = q[s, j]
                        a = j
            c2 = cap_next[c, a]
            r = -invest[p, a] - cost_of_cap[c2]
            p2 = 0
            for u in range(n_units):
                d = digits[u]
                if d < ladder_sizes[u] - 1 and uniforms[ep, t, 2 + u] < advance_prob[u]:
                    d += 1
                digits[u] = d
                p2 += d * price_strides[u]
            t2 = t + 1
            if t2 == horizon:
                target = r
            else:
                code2 = (t2 * p_full + p2) * c_full + c2
                s2 = np.searchsorted(state_codes, code2)
                best2 = q[s2, 0]
                for j in range(1, n_actions):
                    if q[s2, j] > best2:
                        best2 = q[s2, j]
                target = r + gamma * best2
            delta = target - q[s, a]
            q_new = q[s, a] + alpha * delta
            q[s, a] = q_new
            visits[s, a] += 1
            step = alpha * delta
            if step < 0.0:
                step = -step
            if step > max_delta:
                max_delta = step
            if q_new < q_lower or q_new > 1e-9:
                violations += 1
            ep_return += r
            p = p2
            c = c2
        total_return += ep_return
    return max_delta, total_return, violations
