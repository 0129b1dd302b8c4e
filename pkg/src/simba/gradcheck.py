"""Central finite-difference verification of tape gradients.

``max_rel_error`` compares the analytic gradient of a scalar-valued
function against a two-sided difference quotient, coordinate by
coordinate, and reports the worst relative error.  The relative error is
``|analytic - numeric| / max(|analytic|, |numeric|, 1)``; the unit floor
keeps coordinates with near-zero gradients from amplifying difference
noise into spurious failures.

Scope registration for the command-line audit lives in
:mod:`simba.audit`; this module is only the measuring instrument.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from . import tensor as T

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4


def _loss_value(f: Callable[[], T.Tensor]) -> float:
    with T.no_grad():
        return f().item()


def _quotient(f, flat, i, saved, h) -> float:
    flat[i] = saved + h
    f_plus = _loss_value(f)
    flat[i] = saved - h
    f_minus = _loss_value(f)
    flat[i] = saved
    return (f_plus - f_minus) / (2.0 * h)


def max_rel_error(
    f: Callable[[], T.Tensor],
    leaves: Sequence[T.Tensor],
    step: float = DEFAULT_STEP,
    max_coords_per_leaf: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    filter_kinks: bool = False,
) -> float:
    """Worst-case relative error of d f / d leaf over sampled coordinates.

    ``f`` must rebuild the computation from the current contents of
    ``leaves`` on every call (it is invoked twice per sampled coordinate).
    Leaves must be ``real64``; difference noise at real32 would swamp the
    default tolerance.

    ``filter_kinks`` is for compositions containing relu-like or
    shrinkage nonlinearities whose kink positions cannot be controlled
    from the leaves.  A difference quotient straddling a kink measures a
    mixture of one-sided slopes, not the gradient, so each coordinate is
    measured at both ``step`` and ``step / 2`` and discarded if the two
    quotients disagree (the function is not locally linear there).  An
    incorrect analytic gradient at a smooth point still fails: both
    quotients agree with each other and not with it.  More than 25%
    discarded coordinates raises, so the filter cannot mask systematic
    breakage.
    """
    for leaf in leaves:
        if leaf.dtype != T.REAL64:
            raise ValueError("finite differences require real64 leaves")
        leaf.zero_grad()
    loss = f()
    T.backward(loss)
    analytic = [np.array(leaf.grad, copy=True) for leaf in leaves]

    worst = 0.0
    measured = 0
    skipped = 0
    for leaf, ga in zip(leaves, analytic):
        flat = leaf.data.reshape(-1)
        n = flat.size
        if max_coords_per_leaf is not None and n > max_coords_per_leaf:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = rng.choice(n, size=max_coords_per_leaf, replace=False)
        else:
            coords = range(n)
        ga_flat = ga.reshape(-1)
        for i in coords:
            saved = flat[i]
            numeric = _quotient(f, flat, i, saved, step)
            measured += 1
            if filter_kinks:
                half = _quotient(f, flat, i, saved, step / 2.0)
                gap = abs(numeric - half) / max(abs(numeric), abs(half), 1.0)
                if gap > 1e-3:
                    skipped += 1
                    continue
            denom = max(abs(ga_flat[i]), abs(numeric), 1.0)
            worst = max(worst, abs(ga_flat[i] - numeric) / denom)
    if filter_kinks and measured and skipped > 0.25 * measured:
        raise AssertionError(
            f"gradient check: {skipped}/{measured} coordinates rejected as kink "
            "crossings; the function is not differentiable enough to audit"
        )
    return worst


def check(
    f: Callable[[], T.Tensor],
    leaves: Sequence[T.Tensor],
    tolerance: float = DEFAULT_TOLERANCE,
    step: float = DEFAULT_STEP,
    max_coords_per_leaf: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Assert the finite-difference check passes; return the observed error."""
    err = max_rel_error(f, leaves, step=step, max_coords_per_leaf=max_coords_per_leaf, rng=rng)
    if not err < tolerance:
        raise AssertionError(f"gradient check failed: max rel err {err:.3e} >= {tolerance:g}")
    return err
