"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .core import GradTape, NonFiniteError, Tensor


class GradientCheckError(AssertionError):
    pass


def numerical_gradient(fn: Callable[[], Tensor], param: Tensor, epsilon: float = 1e-5) -> np.ndarray:
    base = param.data
    grad = np.zeros_like(base)
    for i in np.ndindex(base.shape):
        values = []
        for sign in (1.0, -1.0):
            bumped = base.copy()
            bumped[i] += sign * epsilon
            param.data = bumped
            v = float(fn().data)
            if not np.isfinite(v):
                param.data = base
                raise NonFiniteError(f"function is non-finite with {param.name or 'param'}{list(i)} "
                                     f"perturbed by {sign * epsilon:+g}")
            values.append(v)
        grad[i] = (values[0] - values[1]) / (2.0 * epsilon)
    param.data = base
    return grad


def gradient_check(fn: Callable[[], Tensor], params: Sequence[Tensor], epsilon: float = 1e-5,
                   tolerance: float | None = None) -> float:
    """Max over all parameter entries of |analytic - numeric| / max(|analytic|, |numeric|, 1e-12).

    ``fn`` takes no arguments and reads the current ``params`` data. If
    ``tolerance`` is given, a larger error raises :class:`GradientCheckError`.
    """
    with GradTape() as tape:
        loss = fn()
    if not np.isfinite(loss.data).all():
        raise NonFiniteError("function value is non-finite at the unperturbed point")
    analytic = tape.gradient(loss, params)
    worst = 0.0
    where = None
    for k, (p, ga) in enumerate(zip(params, analytic)):
        gn = numerical_gradient(fn, p, epsilon)
        denom = np.maximum(np.maximum(np.abs(ga), np.abs(gn)), 1e-12)
        rel = np.atleast_1d(np.abs(ga - gn) / denom)
        # entries where both gradients are ~0 are at the noise floor of the
        # difference quotient, not evidence of a wrong rule
        rel[np.atleast_1d(np.maximum(np.abs(ga), np.abs(gn))) < 1e-9] = 0.0
        if rel.size and rel.max() > worst:
            worst = float(rel.max())
            where = (p.name or f"param{k}", np.unravel_index(int(rel.argmax()), np.shape(ga)))
    if tolerance is not None and worst > tolerance:
        raise GradientCheckError(f"relative error {worst:.3e} at {where} exceeds {tolerance:g}")
    return worst
