"""Exact photocount statistics for small twin-beam instances.

Joint distributions are built mode by mode on a truncated photon-number
grid, thinned binomially to detected counts and convolved across modes.
The binary (dead-time) regime reads clicks off the total detected count.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d
from scipy.special import gammaln
from scipy.stats import poisson

from .exceptions import BudgetExceededError, InvalidParameterError
from .validation import check_choice, check_non_negative, check_positive_int, check_probability

MAX_MODES = 5
MAX_N_MAX = 2000
MAX_GRID = 4_000_000


@dataclass(frozen=True)
class TruncationSpec:
    n_max: int = 60
    tail_bound: float = 1e-12

    def __post_init__(self):
        check_positive_int(self.n_max, "n_max")
        if not 0.0 < self.tail_bound < 1.0:
            raise InvalidParameterError("tail_bound must lie in (0, 1)")

    @staticmethod
    def residual_mass(mean, n_max):
        """Bose-Einstein probability beyond ``n_max``: ``(mean / (1 + mean))**(n_max + 1)``."""
        return (mean / (1.0 + mean)) ** (n_max + 1)

    @classmethod
    def for_mean(cls, mean, tail_bound=1e-12):
        """Smallest cutoff whose single-mode residual mass is within ``tail_bound``."""
        if mean == 0.0:
            return cls(1, tail_bound)
        q = mean / (1.0 + mean)
        n_max = max(1, math.ceil(math.log(tail_bound) / math.log(q)) - 1)
        while cls.residual_mass(mean, n_max) > tail_bound:
            n_max += 1
        if n_max > MAX_N_MAX:
            raise BudgetExceededError(f"cutoff {n_max} for mean {mean} exceeds {MAX_N_MAX}")
        return cls(n_max, tail_bound)


@dataclass(frozen=True)
class JointMoments:
    mean_s: float
    mean_i: float
    var_minus: float
    mean_plus: float
    coincidence_prob: float
    truncated_mass: float

    @property
    def nrf(self):
        return self.var_minus / self.mean_plus


def thermal_pmf(mean, n_max):
    """Bose-Einstein probabilities for 0..n_max photons."""
    n = np.arange(n_max + 1)
    if mean == 0.0:
        return (n == 0).astype(float)
    q = mean / (1.0 + mean)
    return (1.0 - q) * q**n


def thinning_matrix(n_max, p):
    """``B[n, k]`` = probability that ``k`` of ``n`` photons survive with probability ``p``."""
    n = np.arange(n_max + 1)
    if p == 1.0:
        return np.eye(n_max + 1)
    if p == 0.0:
        out = np.zeros((n_max + 1, n_max + 1))
        out[:, 0] = 1.0
        return out
    nn, kk = n[:, None], n[None, :]
    lower = kk <= nn
    log_b = gammaln(nn + 1) - gammaln(kk + 1) - gammaln(np.abs(nn - kk) + 1)
    log_b = log_b + kk * math.log(p) + (nn - kk) * math.log1p(-p)
    return np.where(lower, np.exp(np.where(lower, log_b, 0.0)), 0.0)


def _mode_distributions(pmf, p_s, p_i):
    n_max = pmf.size - 1
    thin_s = thinning_matrix(n_max, p_s)
    thin_i = thinning_matrix(n_max, p_i)
    joint = thin_s.T @ (pmf[:, None] * thin_i)
    return joint, pmf @ thin_s, pmf @ thin_i


def _convolve_power(base, kernel, times, axis=None):
    out = base
    for _ in range(times):
        if axis is None:
            out = convolve2d(out, kernel)
        elif axis == 0:
            out = convolve2d(out, kernel[:, None])
        else:
            out = convolve2d(out, kernel[None, :])
    return out


def joint_count_distribution(source, p_s, p_i, trunc=None):
    """Exact joint law ``D[k_s, k_i]`` of detected counts (no dead time).

    Returns ``(D, truncated_mass)`` where ``truncated_mass`` is the
    probability lost to the per-mode cutoff.
    """
    p_s = check_probability(p_s, "p_s")
    p_i = check_probability(p_i, "p_i")
    if source.kind != "dark_only" and source.modes > MAX_MODES:
        raise BudgetExceededError(f"exact enumeration supports at most {MAX_MODES} modes, got {source.modes}")
    if source.kind == "dark_only":
        return np.ones((1, 1)), 0.0

    if source.kind == "coherent":
        lam = source.mean_photons
        n_max = trunc.n_max if trunc is not None else 1
        tail = 1e-12 if trunc is None else trunc.tail_bound
        while poisson.sf(n_max, lam) > tail:
            n_max += 1
        if n_max > MAX_N_MAX:
            raise BudgetExceededError(f"cutoff {n_max} exceeds {MAX_N_MAX}")
        pmf = poisson.pmf(np.arange(n_max + 1), lam)
        _, m_s, m_i = _mode_distributions(pmf, p_s, p_i)
        return np.outer(m_s, m_i), 1.0 - pmf.sum() ** 2

    mu = source.mean_per_mode
    matched, unmatched = source.matched_modes, source.unmatched_modes
    n_modes = matched + 2 * unmatched
    if trunc is None:
        trunc = TruncationSpec.for_mean(mu, 1e-12 / n_modes)
    elif TruncationSpec.residual_mass(mu, trunc.n_max) > trunc.tail_bound:
        raise BudgetExceededError(
            f"n_max = {trunc.n_max} leaves residual mass {TruncationSpec.residual_mass(mu, trunc.n_max):.3g}"
            f" above tail_bound {trunc.tail_bound}"
        )
    side = (matched + unmatched) * trunc.n_max + 1
    if side * side > MAX_GRID:
        raise BudgetExceededError(f"joint grid {side}x{side} exceeds {MAX_GRID} cells")

    pmf = thermal_pmf(mu, trunc.n_max)
    joint, m_s, m_i = _mode_distributions(pmf, p_s, p_i)
    dist = _convolve_power(np.ones((1, 1)), joint, matched)
    dist = _convolve_power(dist, m_s, unmatched, axis=0)
    dist = _convolve_power(dist, m_i, unmatched, axis=1)
    truncated = 1.0 - pmf.sum() ** n_modes
    return dist, truncated


def exact_joint_moments(source, p_s, p_i, regime="none", trunc=None):
    """Exact detected-count moments for a small source.

    ``regime`` is ``"none"`` (counts are detected photon numbers) or
    ``"binary_per_pulse"`` (each arm reports whether anything was detected).
    """
    check_choice(regime, "regime", {"none", "binary_per_pulse"})
    dist, truncated = joint_count_distribution(source, p_s, p_i, trunc)
    k_s = np.arange(dist.shape[0], dtype=float)[:, None]
    k_i = np.arange(dist.shape[1], dtype=float)[None, :]
    if regime == "binary_per_pulse":
        k_s = np.minimum(k_s, 1.0)
        k_i = np.minimum(k_i, 1.0)
    mean_s = float((dist * k_s).sum())
    mean_i = float((dist * k_i).sum())
    d = k_s - k_i
    e_d = float((dist * d).sum())
    e_d2 = float((dist * d * d).sum())
    coincidence = float(dist[1:, 1:].sum())
    return JointMoments(mean_s, mean_i, e_d2 - e_d * e_d, mean_s + mean_i, coincidence, float(truncated))


def exact_click_prob(modes, mean_per_mode, p):
    """Probability of at least one detection from ``modes`` thermal modes.

    Evaluates the multimode thermal generating function ``(1 + mu (1 - s))**-M``
    at ``s = 1 - p``.
    """
    check_positive_int(modes, "modes")
    check_non_negative(mean_per_mode, "mean_per_mode")
    check_probability(p, "p")
    return -math.expm1(-modes * math.log1p(mean_per_mode * p))


def enumerated_click_prob(modes, mean_per_mode, p, tail_bound=1e-12):
    """Same probability by explicit enumeration of the thinned count law."""
    trunc = TruncationSpec.for_mean(mean_per_mode, tail_bound / modes)
    pmf = thermal_pmf(mean_per_mode, trunc.n_max)
    per_mode = pmf @ thinning_matrix(trunc.n_max, p)
    total = np.ones(1)
    for _ in range(modes):
        total = np.convolve(total, per_mode)
    return float(total[1:].sum())


def binary_moments_pgf(modes, mean_per_mode, p_s, p_i):
    """Binary-regime moments of fully matched thermal twin beams for any mode count.

    Closed-form no-click probabilities from the joint generating function;
    complements :func:`exact_joint_moments` beyond its mode budget.
    """
    def log_no_click(x):
        return -modes * math.log1p(mean_per_mode * x)

    a, b = log_no_click(p_s), log_no_click(p_i)
    c = log_no_click(1.0 - (1.0 - p_s) * (1.0 - p_i))
    q_s, q_i = -math.expm1(a), -math.expm1(b)
    both = math.expm1(c) - math.expm1(a) - math.expm1(b)
    var_minus = q_s + q_i - 2.0 * both - (q_s - q_i) ** 2
    return JointMoments(q_s, q_i, var_minus, q_s + q_i, both, 0.0)
