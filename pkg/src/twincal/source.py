"""Twin-beam photon-number sources.

Each pulse carries ``modes`` detected modes per arm. A fraction ``overlap`` of
them are conjugate-matched: the same Bose-Einstein draw lands in both arms.
The remaining modes contribute independent thermal light to each arm.
"""

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidParameterError
from .validation import check_choice, check_non_negative, check_positive, check_positive_int, check_probability

SOURCE_KINDS = frozenset({"twin_thermal", "coherent", "dark_only"})


@dataclass(frozen=True)
class SourceConfig:
    modes: int = 100
    mean_per_mode: float = 0.0
    overlap: float = 1.0
    kind: str = "twin_thermal"

    def __post_init__(self):
        object.__setattr__(self, "modes", check_positive_int(self.modes, "modes"))
        object.__setattr__(self, "mean_per_mode", check_non_negative(self.mean_per_mode, "mean_per_mode"))
        object.__setattr__(self, "overlap", check_probability(self.overlap, "overlap"))
        check_choice(self.kind, "kind", SOURCE_KINDS)

    @property
    def matched_modes(self):
        # round half up; Python's round() would send 0.5 -> 0
        return min(self.modes, int(math.floor(self.overlap * self.modes + 0.5)))

    @property
    def unmatched_modes(self):
        return self.modes - self.matched_modes

    @property
    def mean_photons(self):
        """Mean photon number per arm per pulse."""
        return self.modes * self.mean_per_mode


@dataclass(frozen=True)
class PhotonPair:
    n_s: int
    n_i: int

    def __post_init__(self):
        if self.n_s < 0 or self.n_i < 0:
            raise InvalidParameterError("photon numbers must be non-negative")


def _bose_einstein(mean, rng):
    # inverse CDF of P(n) = (1 - q) q^n, q = mean / (1 + mean)
    if mean == 0.0:
        return 0
    u = 1.0 - rng.random()
    q = mean / (1.0 + mean)
    return int(math.floor(math.log(u) / math.log(q)))


def sample_pulse(config, rng):
    """Draw one pulse's photon numbers (n_s, n_i) from ``config``."""
    if config.kind == "dark_only":
        return PhotonPair(0, 0)
    if config.kind == "coherent":
        lam = config.mean_photons
        return PhotonPair(int(rng.poisson(lam)), int(rng.poisson(lam)))
    mu = config.mean_per_mode
    shared = sum(_bose_einstein(mu, rng) for _ in range(config.matched_modes))
    n_s = shared + sum(_bose_einstein(mu, rng) for _ in range(config.unmatched_modes))
    n_i = shared + sum(_bose_einstein(mu, rng) for _ in range(config.unmatched_modes))
    return PhotonPair(n_s, n_i)


def _thermal_sum(n_modes, mean, size, rng):
    # sum of n_modes iid geometric(mean) draws is negative binomial
    if n_modes == 0 or mean == 0.0:
        return np.zeros(size, dtype=np.int64)
    return rng.negative_binomial(n_modes, 1.0 / (1.0 + mean), size=size).astype(np.int64)


def sample_batch(config, size, rng):
    """Vectorised :func:`sample_pulse`: return ``(n_s, n_i)`` arrays of length ``size``.

    Draws per mode group rather than per mode, using the negative-binomial
    law of a sum of independent Bose-Einstein counts. The joint law matches
    :func:`sample_pulse` exactly; the random streams do not.
    """
    if config.kind == "dark_only":
        zeros = np.zeros(size, dtype=np.int64)
        return zeros, zeros.copy()
    if config.kind == "coherent":
        lam = config.mean_photons
        return rng.poisson(lam, size).astype(np.int64), rng.poisson(lam, size).astype(np.int64)
    mu = config.mean_per_mode
    shared = _thermal_sum(config.matched_modes, mu, size, rng)
    n_s = shared + _thermal_sum(config.unmatched_modes, mu, size, rng)
    n_i = shared + _thermal_sum(config.unmatched_modes, mu, size, rng)
    return n_s, n_i


def aperture_overlap(d_s, d_i, lambda_s, lambda_i):
    """Fraction of detected signal modes whose idler conjugates are also detected.

    Transverse conjugate angles scale with wavelength and the angular
    acceptance with aperture diameter, so the fraction is the 2D area ratio
    ``((d_i * lambda_s) / (d_s * lambda_i))**2`` clamped to 1. Diameters and
    wavelengths only need consistent units within each pair.
    """
    d_s = check_positive(d_s, "d_s")
    d_i = check_positive(d_i, "d_i")
    lambda_s = check_positive(lambda_s, "lambda_s")
    lambda_i = check_positive(lambda_i, "lambda_i")
    ratio = (d_i * lambda_s) / (d_s * lambda_i)
    return min(1.0, ratio * ratio)
