"""
The numeric self-checks behind ``pptk losscheck``.

Each check is a function registered with :func:`check`; :func:`run_checks`
runs them in registration order against one seeded generator.
"""

from __future__ import annotations

import logging
import math
from typing import Callable

import msgspec
import numpy as np

from .losses import IoUAwareSample, bce_with_logits, gradcheck, iou_aware_loss, iou_aware_loss_grad
from .refexec import mish, mish_grad, silu, silu_grad

__all__ = ("CheckResult", "LossCheckReport", "check", "run_checks", "STANDARD_POINTS")

log = logging.getLogger(__name__)

STANDARD_POINTS = (-2.0, -0.5, 0.3, 1.0, 3.0)


class CheckResult(msgspec.Struct, frozen=True, kw_only=True):
    name: str
    error: float
    tolerance: float
    passed: bool


class LossCheckReport(msgspec.Struct, frozen=True, kw_only=True):
    seed: int
    points: int
    checks: list[CheckResult]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[str]:
        return [f"{c.name}: error {c.error:.3g} > {c.tolerance:g}" for c in self.checks if not c.passed]


class _Options:
    __slots__ = ("rng", "points", "wrong_sign", "tolerance")

    def __init__(self, rng: np.random.Generator, points: int, wrong_sign: bool, tolerance: float) -> None:
        self.rng = rng
        self.points = points
        self.wrong_sign = wrong_sign
        self.tolerance = tolerance


CheckFunc = Callable[[_Options], tuple[float, float]]
_CHECKS: dict[str, CheckFunc] = {}


def check(name: str) -> Callable[[CheckFunc], CheckFunc]:
    """Registers a check returning ``(error, tolerance)``; a tolerance of 0 means the tolerance of the run."""

    def decorator(func: CheckFunc) -> CheckFunc:
        if name in _CHECKS:
            raise ValueError(f"check {name!r} is already registered")
        _CHECKS[name] = func
        return func

    return decorator


@check("iou_aware_loss.ln2")
def _iou_loss_at_half(opts: _Options) -> tuple[float, float]:
    return abs(iou_aware_loss([IoUAwareSample(0.5, 0.0)]) - math.log(2)), 1e-9


@check("iou_aware_loss.saturated")
def _iou_loss_saturated(opts: _Options) -> tuple[float, float]:
    return abs(iou_aware_loss([IoUAwareSample(1.0, 40.0)])), 1e-8


@check("iou_aware_loss.grad")
def _iou_loss_grad(opts: _Options) -> tuple[float, float]:
    sign = -1.0 if opts.wrong_sign else 1.0
    worst = 0.0
    for t, p in zip(opts.rng.uniform(0, 1, opts.points), opts.rng.uniform(-8, 8, opts.points)):
        t = float(t)
        worst = max(
            worst,
            gradcheck(lambda x: float(bce_with_logits(t, x)), lambda x: sign * iou_aware_loss_grad(t, x), [float(p)]),
        )
    return worst, 0.0


@check("mish.values")
def _mish_values(opts: _Options) -> tuple[float, float]:
    if mish(0.0) != 0.0:
        return math.inf, 1e-5
    return abs(mish(1.0) - 0.865098), 1e-5


@check("silu.values")
def _silu_values(opts: _Options) -> tuple[float, float]:
    return (0.0 if silu(0.0) == 0.0 else math.inf), 1e-5


@check("mish.grad")
def _mish_grad(opts: _Options) -> tuple[float, float]:
    points = [*STANDARD_POINTS, *opts.rng.uniform(-6, 6, opts.points).tolist()]
    return gradcheck(mish, mish_grad, points), 0.0


@check("silu.grad")
def _silu_grad(opts: _Options) -> tuple[float, float]:
    points = [*STANDARD_POINTS, *opts.rng.uniform(-6, 6, opts.points).tolist()]
    return gradcheck(silu, silu_grad, points), 0.0


def run_checks(
    seed: int = 0,
    points: int = 100,
    *,
    inject_wrong_sign: bool = False,
    tolerance: float = 1e-4,
) -> LossCheckReport:
    """
    Runs every registered check.

    ``inject_wrong_sign`` negates the analytic IoU-aware gradient so the
    gradient check has to fail.
    """

    if points < 1:
        raise ValueError("points must be >= 1")
    opts = _Options(np.random.default_rng(seed), points, inject_wrong_sign, tolerance)
    results = []
    for name, func in _CHECKS.items():
        error, tol = func(opts)
        tol = tol or tolerance
        results.append(CheckResult(name=name, error=float(error), tolerance=tol, passed=bool(error <= tol)))
        log.info("check %s: error %.3g (tolerance %g)", name, error, tol)
    return LossCheckReport(seed=seed, points=points, checks=results)
