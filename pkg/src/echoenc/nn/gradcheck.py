"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import backward


@dataclass
class GradCheckResult:
    name: str
    max_rel_err: float
    coords_checked: int
    passed: bool


def rel_error(a, b, floor=1e-8):
    return abs(a - b) / max(abs(a), abs(b), floor)


def check_gradients(loss_fn, params, coords_per_param=20, step=3e-5, tol=1e-4, rng=None,
                    names=None, perturb=None):
    """Compare backward() against central differences on random coordinates.

    ``loss_fn(params)`` must rebuild the graph from the store each call and
    return a scalar Tensor. ``perturb`` (name -> float) offsets analytic
    gradients, which exists only to exercise the failure path. The default
    step balances round-off in the loss difference against truncation error.
    """
    rng = rng or np.random.default_rng(0)
    params.zero_grad()
    analytic = backward(loss_fn(params), params)
    results = []
    for name in names or params.names():
        t = params[name]
        flat = t.data.reshape(-1)
        g = analytic[name].reshape(-1)
        n = min(coords_per_param, flat.size)
        idx = rng.choice(flat.size, size=n, replace=False)
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn(params).item()
            flat[i] = orig - step
            down = loss_fn(params).item()
            flat[i] = orig
            numeric = (up - down) / (2 * step)
            ga = g[i] + (perturb or {}).get(name, 0.0)
            # absolute floor keeps coordinates with ~zero gradient from
            # dominating through round-off in the difference quotient
            worst = max(worst, rel_error(ga, numeric, floor=1e-6))
        results.append(GradCheckResult(name, worst, n, worst <= tol))
    params.zero_grad()
    return results
