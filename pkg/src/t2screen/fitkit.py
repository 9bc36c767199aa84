"""Stretched-exponential T2 extraction and the adaptive simulation-window loop.

A coherence curve is only fittable when the simulated window contains both the
shoulder and the tail of the decay; ``assess_window`` classifies a curve as
incomplete (extend), decayed-too-early (shrink) or acceptable, and ``autofit``
iterates window -> simulate -> assess until a reliable fit comes out.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .cce.engine import CoherenceCurve
from .errors import InsufficientDecayError, T2ScreenError

log = logging.getLogger(__name__)

T2_BOUNDS_MS = (1e-9, 1e12)
N_BOUNDS = (0.5, 6.0)
T_MAX_CLAMP_MS = (1e-6, 1e6)


@dataclass(frozen=True)
class T2Fit:
    t2_ms: float
    n_exponent: float
    rms_residual: float
    covariance: np.ndarray  # 2x2 (T2, n)
    converged: bool

    def __post_init__(self):
        if self.t2_ms <= 0:
            raise ValueError("fitted T2 must be positive")
        if not N_BOUNDS[0] <= self.n_exponent <= N_BOUNDS[1]:
            raise ValueError(f"stretching exponent {self.n_exponent} outside bounds")


@dataclass(frozen=True)
class WindowDecision:
    status: str  # accept | extend | shrink
    next_t_max: float
    reason: str

    def __post_init__(self):
        if self.status not in ("accept", "extend", "shrink"):
            raise ValueError(f"bad status {self.status!r}")
        if self.next_t_max <= 0:
            raise ValueError("next_t_max must be positive")


@dataclass(frozen=True)
class WindowThresholds:
    incomplete: float = 0.5  # L(t_max) above this: window too short
    early_floor: float = 0.02  # noise floor for the decayed-too-early test
    early_fraction: float = 0.1  # fraction of the window the decay may occupy


def stretched_exponential(t, t2, n):
    return np.exp(-((t / t2) ** n))


def _first_crossing(times: np.ndarray, L: np.ndarray, level: float) -> float | None:
    """Linearly interpolated first time where L drops below ``level``."""
    below = np.nonzero(L < level)[0]
    if len(below) == 0:
        return None
    i = below[0]
    if i == 0:
        return float(times[0])
    t0, t1 = times[i - 1], times[i]
    l0, l1 = L[i - 1], L[i]
    return float(t0 + (l0 - level) / (l0 - l1) * (t1 - t0))


def fit_stretched_exponential(curve: CoherenceCurve) -> T2Fit:
    """Weighted (uniform) nonlinear least squares for exp[-(t/T2)^n]."""
    times, L = curve.times_ms, curve.L
    if len(times) < 10:
        raise T2ScreenError("need at least 10 points to fit")
    if abs(L[0] - 1.0) > 1e-3:
        raise T2ScreenError(f"L(0) = {L[0]:.4f}, expected 1")
    if L.min() > 0.9:
        raise InsufficientDecayError(
            "curve never decays below 0.9; extend the simulation window"
        )
    if int((L < 0.9).sum()) < 3:
        raise InsufficientDecayError("fewer than 3 points below L = 0.9")

    t_1e = _first_crossing(times, L, 1.0 / np.e)
    x0 = np.array([t_1e if t_1e and t_1e > 0 else times[-1] / 2.0, 2.0])
    x0[0] = np.clip(x0[0], *T2_BOUNDS_MS)

    def residuals(p):
        return stretched_exponential(times, p[0], p[1]) - L

    res = least_squares(
        residuals,
        x0,
        bounds=([T2_BOUNDS_MS[0], N_BOUNDS[0]], [T2_BOUNDS_MS[1], N_BOUNDS[1]]),
        gtol=1e-12,
        xtol=1e-12,
        ftol=1e-12,
    )
    dof = max(len(times) - 2, 1)
    rms = float(np.sqrt(np.mean(res.fun**2)))
    jtj = res.jac.T @ res.jac
    try:
        cov = np.linalg.inv(jtj) * (res.fun @ res.fun) / dof
    except np.linalg.LinAlgError:
        cov = np.full((2, 2), np.nan)
    grad_norm = float(np.linalg.norm(res.grad)) if res.grad is not None else np.inf
    converged = bool(res.success) and (grad_norm < 1e-10 or res.status in (2, 3, 4))
    return T2Fit(
        t2_ms=float(res.x[0]),
        n_exponent=float(res.x[1]),
        rms_residual=rms,
        covariance=cov,
        converged=converged,
    )


def assess_window(
    curve: CoherenceCurve, thresholds: WindowThresholds = WindowThresholds()
) -> WindowDecision:
    """Classify a simulated window as accept / extend / shrink."""
    times, L = curve.times_ms, curve.L
    if len(times) == 0:
        raise T2ScreenError("empty curve")
    t_max = float(times[-1])
    if L[-1] > thresholds.incomplete:
        return WindowDecision(
            status="extend",
            next_t_max=_clamp(2.0 * t_max),
            reason=f"L(t_max) = {L[-1]:.3f} > {thresholds.incomplete}: decay incomplete",
        )
    tail = times > thresholds.early_fraction * t_max
    if tail.any() and np.all(L[tail] < thresholds.early_floor):
        t_1e = _first_crossing(times, L, 1.0 / np.e)
        target = 4.0 * t_1e if t_1e and t_1e > 0 else t_max / 4.0
        target = min(target, 0.99 * t_max)  # shrink must shrink
        return WindowDecision(
            status="shrink",
            next_t_max=_clamp(target),
            reason=f"decayed below {thresholds.early_floor} within "
            f"{thresholds.early_fraction:.0%} of the window",
        )
    return WindowDecision(status="accept", next_t_max=t_max, reason="window acceptable")


def _clamp(t_max: float) -> float:
    return float(np.clip(t_max, *T_MAX_CLAMP_MS))


_STATUS_FROM_DECISION = {
    "accept": "ok",
    "extend": "incomplete",
    "shrink": "decayed-too-early",
}


@dataclass
class AutofitResult:
    fit: T2Fit
    rounds_used: int
    converged: bool
    curve: CoherenceCurve
    history: list[dict] = field(default_factory=list)


def autofit(
    compute,
    t_max0_ms: float,
    max_rounds: int = 10,
    thresholds: WindowThresholds = WindowThresholds(),
) -> AutofitResult:
    """Iterate window assessment until a curve supports a reliable fit.

    ``compute`` maps t_max (ms) -> CoherenceCurve. Returns the last fit with a
    convergence flag; raises only if no window ever produced a fittable curve.
    """
    if max_rounds < 1:
        raise ValueError("max_rounds must be >= 1")
    t_max = _clamp(t_max0_ms)
    history: list[dict] = []
    curve = None
    decision = None
    for round_idx in range(1, max_rounds + 1):
        curve = compute(t_max)
        decision = assess_window(curve, thresholds)
        history.append(
            {"round": round_idx, "t_max_ms": t_max, "status": decision.status,
             "reason": decision.reason}
        )
        log.info("window round %d: t_max=%.4g ms -> %s (%s)",
                 round_idx, t_max, decision.status, decision.reason)
        if decision.status == "accept":
            fit = fit_stretched_exponential(curve)
            return AutofitResult(
                fit=fit,
                rounds_used=round_idx,
                converged=True,
                curve=curve.with_status("ok"),
                history=history,
            )
        if decision.next_t_max == t_max:  # clamped at the boundary
            break
        t_max = decision.next_t_max

    # best effort on the last curve
    status = _STATUS_FROM_DECISION.get(decision.status if decision else "accept", "ok")
    try:
        fit = fit_stretched_exponential(curve)
    except InsufficientDecayError:
        raise InsufficientDecayError(
            f"no acceptable window after {max_rounds} rounds (last t_max {t_max:.3g} ms)"
        ) from None
    return AutofitResult(
        fit=fit,
        rounds_used=len(history),
        converged=False,
        curve=curve.with_status(status),
        history=history,
    )
