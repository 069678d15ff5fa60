"""Central finite-difference gradient checking."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autodiff import NonFiniteError


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    n_checked: int
    n_excluded: int
    worst: tuple | None = None
    errors: dict = field(default_factory=dict, repr=False)

    @property
    def passed(self) -> bool:
        return self.n_checked > 0 and self.max_rel_error <= self.tolerance


def rel_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(function: Callable, params, tolerance: float = 1e-4, step: float = 1e-5,
               max_coords: int = 1000, seed: int = 0, kink_tol: float = 1e-3) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``function(params)`` must return ``(value, grads)`` where ``grads`` mirrors
    ``params`` (a dict of arrays, or a single array).  At most ``max_coords``
    coordinates are sampled.  Coordinates whose one-sided slopes disagree by
    more than ``kink_tol`` sit on a non-differentiable point and are excluded.
    """
    single = not isinstance(params, dict)
    work = {"x": np.array(params, dtype=np.float64)} if single else \
        {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def call():
        value, grads = function(work["x"] if single else work)
        value = float(value)
        if not np.isfinite(value):
            raise NonFiniteError("loss is not finite at the checked point")
        return value, ({"x": grads} if single else grads)

    f0, grads = call()
    coords = [(name, idx) for name, arr in work.items() for idx in np.ndindex(arr.shape)]
    if len(coords) > max_coords:
        rng = np.random.default_rng(seed)
        pick = np.sort(rng.choice(len(coords), size=max_coords, replace=False))
        coords = [coords[i] for i in pick]

    errors: dict = {}
    excluded = 0
    worst, worst_err = None, 0.0
    for name, idx in coords:
        arr = work[name]
        orig = arr[idx]
        arr[idx] = orig + step
        fp = call()[0]
        arr[idx] = orig - step
        fm = call()[0]
        arr[idx] = orig
        numeric = (fp - fm) / (2 * step)
        fwd, bwd = (fp - f0) / step, (f0 - fm) / step
        if abs(fwd - bwd) > kink_tol * max(1.0, abs(numeric)):
            excluded += 1
            continue
        g = grads.get(name)
        analytic = 0.0 if g is None else float(g[idx])
        err = rel_error(analytic, numeric)
        errors[(name, idx)] = err
        if err >= worst_err:
            worst, worst_err = (name, idx, analytic, numeric), err
    return GradCheckReport(worst_err, tolerance, len(errors), excluded, worst, errors)
