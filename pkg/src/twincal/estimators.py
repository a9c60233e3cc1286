"""Absolute QE estimators: coincidence counting and the difference signal.

The functional layer (``klyshko_qe``, ``nrf_model``, ``solve_qe_from_nrf`` ...)
works on plain numbers and :class:`~twincal.counts.CountsSummary` objects. The
``*Calibrator`` classes wrap it in a scikit-learn style ``fit`` interface.
"""

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .counts import CountsSummary
from .detection import accidental_rate
from .exceptions import (
    DegenerateDenominatorError,
    InconsistentInputsWarning,
    InconsistentMeasurementError,
    InsufficientDataError,
    InvalidParameterError,
    NoPhysicalSolutionError,
    NoSignalError,
    OverSubtractionError,
    SingularParametersError,
    ValidityWarning,
)
from .validation import check_non_negative, check_positive

METHODS = ("klyshko", "difference_signal")

# dead-time term is a small-<N_+> expansion
DEAD_TIME_WARN = 0.05
DEAD_TIME_MAX = 0.1

# roots this close above 1 are rounding, not unphysical
ROOT_SLACK = 1e-12

MIN_PULSES_FOR_SE = 100
MIN_BLOCKS_FOR_SE = 50


@dataclass(frozen=True)
class CalibrationResult:
    eta: float
    std_err: float
    method: str
    nrf: float | None = None
    ratio_r: float | None = None
    mean_n_plus: float | None = None
    n_pulses: int | None = None
    flags: tuple = field(default=())

    CSV_FIELDS = ("method", "eta", "std_err", "nrf", "ratio_r", "mean_n_plus", "n_pulses")

    def as_row(self):
        return {name: getattr(self, name) for name in self.CSV_FIELDS}


# -- coincidence counting


def klyshko_qe(N_c, N_ac, N_s, N_bn):
    """Coincidence-to-singles ratio ``(N_c - N_ac) / (N_s - N_bn)``.

    Values above 1 are returned unchanged with an
    :class:`InconsistentInputsWarning`.
    """
    denom = N_s - N_bn
    if denom <= 0:
        raise DegenerateDenominatorError(f"N_s - N_bn = {denom!r} must be positive")
    eta = (N_c - N_ac) / denom
    if eta > 1.0:
        warnings.warn(f"Klyshko ratio {eta:.6g} exceeds 1", InconsistentInputsWarning, stacklevel=2)
    return eta


# -- difference signal


def nrf_empirical(summary):
    """Noise reduction factor Var(N_-) / <N_+> of a run."""
    if summary.n_pulses < 2:
        raise InsufficientDataError("NRF needs at least 2 pulses")
    if summary.sum_plus <= 0:
        raise NoSignalError("no counts in either arm")
    return summary.var_minus / summary.mean_plus


def _check_dead_time_range(mean_n_plus):
    if mean_n_plus > DEAD_TIME_MAX:
        raise InvalidParameterError(
            f"dead-time correction needs <N_+> << 1; got {mean_n_plus:.4g} > {DEAD_TIME_MAX}"
        )
    if mean_n_plus > DEAD_TIME_WARN:
        warnings.warn(
            f"<N_+> = {mean_n_plus:.4g} is above {DEAD_TIME_WARN}; dead-time term loses accuracy",
            ValidityWarning,
            stacklevel=3,
        )


def dead_time_term(eta_i, eta_s, mean_n_plus):
    """Replacement for the unbalance term when each gate registers at most one count."""
    s = eta_i + eta_s
    p2 = eta_i * eta_i * eta_s * eta_s
    return mean_n_plus * (eta_i * eta_s / s - (eta_i**2 + eta_s**2 + p2) / s**2 + 2.0 * p2 / s**3)


def nrf_model(eta_i, eta_s, mean_n_plus, dead_time=False):
    """Predicted NRF of twin beams detected with QEs ``eta_i`` and ``eta_s``."""
    if eta_i + eta_s == 0:
        raise SingularParametersError("eta_i + eta_s must be non-zero")
    for name, value in (("eta_i", eta_i), ("eta_s", eta_s)):
        if not 0.0 < value <= 1.0:
            raise InvalidParameterError(f"{name} must lie in (0, 1], got {value!r}")
    mean_n_plus = check_non_negative(mean_n_plus, "mean_n_plus")
    s = eta_i + eta_s
    base = 1.0 - 2.0 * eta_i * eta_s / s
    if dead_time:
        _check_dead_time_range(mean_n_plus)
        return base + dead_time_term(eta_i, eta_s, mean_n_plus)
    return base + mean_n_plus * (eta_i - eta_s) ** 2 / s**2


def _quadratic_roots(a, b, c):
    disc = b * b - 4.0 * a * c
    if disc < 0:
        raise InconsistentMeasurementError(f"negative discriminant {disc:.6g}")
    # cancellation-free form
    q = -0.5 * (b + math.copysign(math.sqrt(disc), b))
    roots = []
    if a != 0:
        roots.append(q / a)
    if q != 0:
        roots.append(c / q)
    return roots


def solve_qe_from_nrf(nrf, ratio_r, mean_n_plus, dead_time=False):
    """Invert :func:`nrf_model` for ``eta_i`` given ``r = eta_i / eta_s``.

    Without dead time the inversion is linear. With it the result is the
    root of a quadratic; exactly one root must fall in (0, 1].
    """
    r = check_positive(ratio_r, "ratio_r")
    n = check_non_negative(mean_n_plus, "mean_n_plus")
    if not nrf > 0:
        raise InvalidParameterError(f"nrf must be positive, got {nrf!r}")
    u = r + 1.0
    if not dead_time:
        eta = 0.5 * u * (1.0 + n * ((r - 1.0) / u) ** 2 - nrf)
        if not 0.0 < eta <= 1.0 + ROOT_SLACK:
            raise NoPhysicalSolutionError(f"eta_i = {eta:.6g} is outside (0, 1]")
        return min(eta, 1.0)
    _check_dead_time_range(n)
    # nrf_model with eta_s = x / r, collected in powers of x
    a = -n / u**2
    b = (n - 2.0) / u + 2.0 * n * r / u**3
    c = 1.0 - n * (r * r + 1.0) / u**2 - nrf
    if a == 0:
        roots = [-c / b]
    else:
        roots = _quadratic_roots(a, b, c)
    physical = [x for x in roots if 0.0 < x <= 1.0 + ROOT_SLACK]
    if len(physical) != 1:
        raise NoPhysicalSolutionError(f"{len(physical)} roots in (0, 1] among {roots}")
    return min(physical[0], 1.0)


def solve_qe_numeric(nrf, ratio_r, mean_n_plus, dead_time=False):
    """Bracketing root-finder for the same inversion; cross-checks the closed forms."""
    r = check_positive(ratio_r, "ratio_r")
    # eta_s = x / r must also stay within (0, 1]
    hi = min(1.0, r)

    def residual(x):
        return nrf_model(x, x / r, mean_n_plus, dead_time) - nrf

    lo = 1e-15
    if residual(lo) * residual(hi) > 0:
        raise NoPhysicalSolutionError("no sign change of the NRF residual on (0, 1]")
    return brentq(residual, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)


def measured_ratio(summary):
    """Estimate ``eta_i / eta_s`` as the ratio of idler to signal counts."""
    if summary.N_s <= 0:
        raise NoSignalError("no signal-arm counts")
    r = summary.N_i / summary.N_s
    if r <= 0:
        warnings.warn("no idler counts; ratio is degenerate", InconsistentInputsWarning, stacklevel=2)
    return r


# -- background handling


def _subtract_binary(signal_run, background_run):
    # independent no-click probabilities multiply: P_total(no click) = P_pdc * P_bg
    n = signal_run.n_pulses
    nb = background_run.n_pulses
    bg_none_s = 1.0 - background_run.N_s / nb
    bg_none_i = 1.0 - background_run.N_i / nb
    bg_none_both = 1.0 - (background_run.N_s + background_run.N_i - background_run.N_c) / nb
    if min(bg_none_s, bg_none_i, bg_none_both) <= 0:
        raise OverSubtractionError("background clicks in every gate")
    none_s = (1.0 - signal_run.N_s / n) / bg_none_s
    none_i = (1.0 - signal_run.N_i / n) / bg_none_i
    none_both = (1.0 - (signal_run.N_s + signal_run.N_i - signal_run.N_c) / n) / bg_none_both
    N_s = n * (1.0 - none_s)
    N_i = n * (1.0 - none_i)
    N_c = n * (1.0 - none_s - none_i + none_both)
    if N_s <= 0 or N_s + N_i <= 0:
        raise OverSubtractionError(f"corrected N_s = {N_s:.6g}, sum_plus = {N_s + N_i:.6g}")
    # 0/1 counts: (c_s - c_i)^2 = c_s + c_i - 2 c_s c_i
    return CountsSummary(n, N_s, N_i, N_c, N_s - N_i, N_s + N_i - 2.0 * N_c, N_s + N_i)


def subtract_background(signal_run, background_run, timing=None, regime="none"):
    """Remove the contribution measured with the PDC blocked.

    For ``regime="none"`` the background is additive: means subtract
    directly and the difference variance subtracts the background variance
    (independent sources). Coincidences lose the accidentals between
    background and signal clicks, estimated with :func:`accidental_rate`;
    the default K = 1 is the gate-level coincidence probability of
    independent events.

    For ``regime="binary_per_pulse"`` a gate clicks if either source fires,
    so the no-click probabilities are divided out instead and the
    photon-only click table is rebuilt exactly.
    """
    if regime == "binary_per_pulse":
        return _subtract_binary(signal_run, background_run)
    k = 1.0 if timing is None else timing
    n = signal_run.n_pulses
    scale = n / background_run.n_pulses

    b_s = background_run.N_s / background_run.n_pulses
    b_i = background_run.N_i / background_run.n_pulses
    N_s = signal_run.N_s - background_run.N_s * scale
    N_i = signal_run.N_i - background_run.N_i * scale
    sum_plus = signal_run.sum_plus - background_run.sum_plus * scale
    if N_s <= 0 or sum_plus <= 0:
        raise OverSubtractionError(f"corrected N_s = {N_s:.6g}, sum_plus = {sum_plus:.6g}")

    q_s = min(1.0, max(0.0, N_s / n))
    q_i = min(1.0, max(0.0, N_i / n))
    bg_acc = (
        accidental_rate(min(b_s, 1.0), q_i, k)
        + accidental_rate(q_s, min(b_i, 1.0), k)
        + accidental_rate(min(b_s, 1.0), min(b_i, 1.0), k)
    )
    N_c = signal_run.N_c - n * bg_acc

    mean_minus = signal_run.sum_minus / n - background_run.sum_minus / background_run.n_pulses
    var_minus = signal_run.var_minus - (background_run.var_minus if background_run.n_pulses > 1 else 0.0)
    sum_minus = mean_minus * n
    sum_minus_sq = var_minus * (n - 1) + n * mean_minus**2
    return CountsSummary(n, N_s, N_i, N_c, sum_minus, sum_minus_sq, sum_plus)


def _is_empty(summary):
    return summary is None or (summary.sum_plus == 0 and summary.N_c == 0 and summary.sum_minus_sq == 0)


# -- full estimates


def _klyshko_eta(summary, background, accidental_factor, regime="none"):
    n = summary.n_pulses
    if _is_empty(background):
        N_bn, bg_acc, N_s, N_i = 0.0, 0.0, summary.N_s, summary.N_i
    else:
        corrected = subtract_background(summary, background, regime=regime)
        N_bn = summary.N_s - corrected.N_s
        bg_acc = summary.N_c - corrected.N_c
        N_s, N_i = corrected.N_s, corrected.N_i
    N_ac = accidental_rate(min(1.0, N_s / n), min(1.0, max(0.0, N_i / n)), accidental_factor) * n + bg_acc
    return klyshko_qe(summary.N_c, N_ac, summary.N_s, N_bn)


def _regime_for(dead_time):
    return "binary_per_pulse" if dead_time else "none"


def _difference_signal(summary, background, dead_time):
    if _is_empty(background):
        corrected = summary
    else:
        corrected = subtract_background(summary, background, regime=_regime_for(dead_time))
    nrf = nrf_empirical(corrected)
    r = measured_ratio(corrected)
    n_plus = corrected.mean_plus
    eta = solve_qe_from_nrf(nrf, r, n_plus, dead_time)
    return eta, nrf, r, n_plus


def _estimate(summary, method, background, accidental_factor, dead_time):
    if method == "klyshko":
        return _klyshko_eta(summary, background, accidental_factor, _regime_for(dead_time))
    if method == "difference_signal":
        return _difference_signal(summary, background, dead_time)[0]
    if method == "nrf":
        return nrf_empirical(summary)
    raise InvalidParameterError(f"unknown method {method!r}")


def standard_errors(
    summary,
    method,
    background=None,
    *,
    accidental_factor=0.65,
    dead_time=False,
    n_boot=200,
    random_state=0,
):
    """Block-bootstrap standard error of an estimator over a run.

    ``method`` is ``"klyshko"``, ``"difference_signal"`` or ``"nrf"`` (the
    raw noise reduction factor, background ignored).

    Resamples the summary's blocks (and independently the background run's
    blocks, when given) with replacement, re-evaluates the estimator and
    returns the standard deviation of the replicates. ``dead_time`` also
    selects the binary background-subtraction rule for either method.
    """
    if summary.n_pulses < MIN_PULSES_FOR_SE:
        raise InsufficientDataError(f"need at least {MIN_PULSES_FOR_SE} pulses, got {summary.n_pulses}")
    if summary.blocks is None or summary.blocks.shape[0] < MIN_BLOCKS_FOR_SE:
        have = 0 if summary.blocks is None else summary.blocks.shape[0]
        raise InsufficientDataError(f"need at least {MIN_BLOCKS_FOR_SE} blocks, got {have}")
    rng = np.random.default_rng(random_state)
    blocks = summary.blocks
    bg_blocks = None if _is_empty(background) or background.blocks is None else background.blocks
    replicates = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for _ in range(n_boot):
            pick = rng.integers(0, blocks.shape[0], blocks.shape[0])
            boot = CountsSummary.from_blocks(blocks[pick])
            boot_bg = background
            if bg_blocks is not None:
                boot_bg = CountsSummary.from_blocks(bg_blocks[rng.integers(0, bg_blocks.shape[0], bg_blocks.shape[0])])
            try:
                replicates.append(_estimate(boot, method, boot_bg, accidental_factor, dead_time))
            except (ArithmeticError, ValueError):
                continue
    if len(replicates) < 2:
        raise InsufficientDataError("bootstrap produced fewer than 2 valid replicates")
    if np.ptp(replicates) == 0:
        return 0.0
    return float(np.std(replicates, ddof=1))


def _clamped(eta, flags):
    if eta > 1.0:
        return 1.0, (*flags, "eta_above_1")
    if eta < 0.0:
        return 0.0, (*flags, "eta_below_0")
    return eta, flags


def estimate_klyshko(
    summary, background=None, *, accidental_factor=0.65, dead_time=False, n_boot=200, random_state=0
):
    """Klyshko estimate with bootstrap error as a :class:`CalibrationResult`.

    ``dead_time`` marks binary detectors; it only changes how a background
    run is subtracted.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", InconsistentInputsWarning)
        raw = _klyshko_eta(summary, background, accidental_factor, _regime_for(dead_time))
    eta, flags = _clamped(raw, ())
    se = standard_errors(
        summary,
        "klyshko",
        background,
        accidental_factor=accidental_factor,
        dead_time=dead_time,
        n_boot=n_boot,
        random_state=random_state,
    )
    return CalibrationResult(eta, se, "klyshko", n_pulses=summary.n_pulses, flags=flags)


def estimate_difference_signal(summary, background=None, *, dead_time=False, n_boot=200, random_state=0):
    """Difference-signal estimate with bootstrap error as a :class:`CalibrationResult`."""
    flags = ()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        eta, nrf, r, n_plus = _difference_signal(summary, background, dead_time)
    flags += tuple(sorted({w.category.__name__ for w in caught}))
    se = standard_errors(
        summary, "difference_signal", background, dead_time=dead_time, n_boot=n_boot, random_state=random_state
    )
    return CalibrationResult(
        eta, se, "difference_signal", nrf=nrf, ratio_r=r, mean_n_plus=n_plus, n_pulses=summary.n_pulses, flags=flags
    )


# -- scikit-learn style front end


def _as_summary(X, n_blocks):
    if isinstance(X, CountsSummary):
        return X
    return CountsSummary.from_records(X, n_blocks=n_blocks)


class _CalibratorBase(BaseEstimator):
    def _fit_summaries(self, X, background):
        summary = _as_summary(X, self.n_blocks)
        bg = None if background is None else _as_summary(background, self.n_blocks)
        return summary, bg

    def _store(self, result):
        self.result_ = result
        self.eta_ = result.eta
        self.std_err_ = result.std_err
        self.n_pulses_ = result.n_pulses
        return self

    def predict(self, X=None):
        """Return the fitted efficiency (one value per row of ``X`` if given)."""
        check_is_fitted(self, "eta_")
        if X is None:
            return self.eta_
        return np.full(len(X), self.eta_)


class KlyshkoCalibrator(_CalibratorBase):
    """Coincidence-counting (Klyshko) calibration of the idler arm.

    Parameters
    ----------
    accidental_factor : float
        K in ``N_ac = N_s N_i K / n_pulses``.
    binary : bool
        Detectors register at most one count per gate (affects background
        subtraction only).
    n_boot : int
        Bootstrap replicates for the standard error.
    n_blocks : int
        Blocks used when ``fit`` receives raw count records.
    random_state : int
        Seed of the bootstrap stream.

    Attributes
    ----------
    eta_ : float
        Estimated quantum efficiency of the calibrated arm.
    std_err_ : float
        Block-bootstrap standard error of ``eta_``.
    result_ : CalibrationResult
    """

    def __init__(self, accidental_factor=0.65, binary=False, n_boot=200, n_blocks=64, random_state=0):
        self.accidental_factor = accidental_factor
        self.binary = binary
        self.n_boot = n_boot
        self.n_blocks = n_blocks
        self.random_state = random_state

    def fit(self, X, y=None, background=None):
        """Fit on a :class:`CountsSummary` or an ``(n_pulses, 2)`` record array.

        ``background`` is the matching run with the source blocked.
        """
        summary, bg = self._fit_summaries(X, background)
        result = estimate_klyshko(
            summary,
            bg,
            accidental_factor=self.accidental_factor,
            dead_time=self.binary,
            n_boot=self.n_boot,
            random_state=self.random_state,
        )
        return self._store(result)


class DifferenceSignalCalibrator(_CalibratorBase):
    """Difference-signal (noise reduction factor) calibration of the idler arm.

    Set ``dead_time=True`` for detectors that register at most one count per
    gate; the NRF model then uses the dead-time corrected unbalance term.
    The fitted ``nrf_``, ``ratio_r_`` and ``mean_n_plus_`` are the measured
    inputs of the inversion.
    """

    def __init__(self, dead_time=False, n_boot=200, n_blocks=64, random_state=0):
        self.dead_time = dead_time
        self.n_boot = n_boot
        self.n_blocks = n_blocks
        self.random_state = random_state

    def fit(self, X, y=None, background=None):
        summary, bg = self._fit_summaries(X, background)
        result = estimate_difference_signal(
            summary, bg, dead_time=self.dead_time, n_boot=self.n_boot, random_state=self.random_state
        )
        self.nrf_ = result.nrf
        self.ratio_r_ = result.ratio_r
        self.mean_n_plus_ = result.mean_n_plus
        return self._store(result)


def with_flags(result, *flags):
    return replace(result, flags=(*result.flags, *flags))
