"""Finite-difference verification of reverse-mode gradients.

All checks run in float64 with central differences. ``check_gradients``
compares analytic gradients against numeric ones coordinate by coordinate
and reports the worst relative error, where the relative error of a pair
(a, n) is |a - n| / max(|a|, |n|, atol_floor).
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tape, Tensor, backward


def numeric_gradient(fn, param: Tensor, h: float = 1e-4, coords=None) -> np.ndarray:
    """Central-difference gradient of scalar ``fn()`` w.r.t. ``param``.

    ``coords`` restricts evaluation to a list of flat indices; unevaluated
    coordinates are returned as NaN so callers can mask them.
    """
    flat = param.data.reshape(-1)
    grad = np.full(flat.shape, np.nan)
    indices = range(flat.size) if coords is None else coords
    for i in indices:
        orig = flat[i]
        flat[i] = orig + h
        f_plus = fn()
        flat[i] = orig - h
        f_minus = fn()
        flat[i] = orig
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad.reshape(param.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_gradients(build_loss, params, h: float = 1e-4, coords_per_param=None,
                    rng: np.random.Generator = None, floor: float = 1e-6):
    """Compare tape gradients with central differences for each parameter.

    ``build_loss`` is a zero-argument callable returning a scalar Tensor and
    must be pure given the current parameter values. ``params`` maps name ->
    Tensor (all float64). When ``coords_per_param`` is set, only that many
    randomly chosen coordinates per tensor are probed.

    Returns ``{name: (max_rel_err, n_checked)}``.
    """
    for name, p in params.items():
        if p.data.dtype != np.float64:
            raise TypeError(f"gradcheck requires float64 parameters, {name} is {p.data.dtype}")

    with Tape() as tape:
        loss = build_loss()
    analytic = backward(tape, loss, params=list(params.values()))

    def eval_scalar() -> float:
        return float(build_loss().data)

    report = {}
    for name, p in params.items():
        if coords_per_param is None or p.size <= coords_per_param:
            coords = None
            n_checked = p.size
        else:
            gen = rng if rng is not None else np.random.default_rng(0)
            coords = gen.choice(p.size, size=coords_per_param, replace=False)
            n_checked = coords_per_param
        num = numeric_gradient(eval_scalar, p, h=h, coords=coords)
        ana = analytic[p]
        mask = ~np.isnan(num)
        err = relative_error(ana[mask], num[mask], floor=floor)
        report[name] = (err, int(n_checked))
    return report
