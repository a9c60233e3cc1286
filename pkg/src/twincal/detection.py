"""Detection chain: loss, QE, dead time, dark counts, background, coincidences.

Durations are in seconds and rates in counts per second throughout.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .counts import CountsSummary, block_totals
from .exceptions import InvalidParameterError
from .source import sample_batch
from .validation import check_choice, check_non_negative, check_positive, check_positive_int, check_probability

REGIMES = frozenset({"none", "binary_per_pulse"})

# per-run batch cap; run_pulses also guarantees at least MIN_BLOCKS batches
MAX_BATCH = 1 << 17
MIN_BLOCKS = 64


@dataclass(frozen=True)
class ArmConfig:
    transmission: float = 1.0
    eta0: float = 1.0
    dark_prob: float = 0.0
    bg_rate: float = 0.0
    blind_window: float = 0.0
    dead_time_regime: str = "binary_per_pulse"

    def __post_init__(self):
        check_probability(self.transmission, "transmission")
        check_probability(self.eta0, "eta0")
        check_probability(self.dark_prob, "dark_prob", open_upper=True)
        check_non_negative(self.bg_rate, "bg_rate")
        check_non_negative(self.blind_window, "blind_window")
        check_choice(self.dead_time_regime, "dead_time_regime", REGIMES)

    @property
    def blind_prob(self):
        """Per-gate probability that a background event has blinded the detector."""
        return min(1.0, self.bg_rate * self.blind_window)


@dataclass(frozen=True)
class TimingConfig:
    gate_width: float = 30e-9
    coincidence_window: float = 4.2e-9
    rep_rate: float = 10e3
    pulse_width: float = 5e-9
    accidental_factor: float = 0.65

    def __post_init__(self):
        for name in ("gate_width", "coincidence_window", "rep_rate", "pulse_width", "accidental_factor"):
            check_positive(getattr(self, name), name)
        if self.accidental_factor > 1.0:
            raise InvalidParameterError("accidental_factor must lie in (0, 1]")
        if self.coincidence_window > self.gate_width:
            raise InvalidParameterError("coincidence_window must not exceed gate_width")
        if self.pulse_width > self.gate_width:
            raise InvalidParameterError("pulse_width must not exceed gate_width")


@dataclass(frozen=True)
class PulseRecord:
    c_s: int
    c_i: int
    coincident: bool


def effective_qe(arm):
    """Per-photon detection probability ``eta0 * T * (1 - blind probability)``."""
    return arm.eta0 * arm.transmission * max(0.0, 1.0 - arm.bg_rate * arm.blind_window)


def noise_mean(arm, timing=None):
    """Mean number of non-photon counts per gate (dark + background light)."""
    gate = TimingConfig().gate_width if timing is None else timing.gate_width
    return -math.log1p(-arm.dark_prob) + arm.bg_rate * gate


def detect_pulse(photons, arm, rng, timing=None):
    """Count registered in one gate for ``photons`` photons reaching the arm."""
    survivors = int(rng.binomial(photons, effective_qe(arm)))
    lam = noise_mean(arm, timing)
    noise = int(rng.poisson(lam)) if lam > 0 else 0
    if arm.dead_time_regime == "binary_per_pulse":
        return int(survivors + noise > 0)
    return survivors + noise


def detect_batch(photons, arm, rng, timing=None):
    """Vectorised :func:`detect_pulse` over an array of photon numbers."""
    counts = rng.binomial(photons, effective_qe(arm)).astype(np.int64)
    lam = noise_mean(arm, timing)
    if lam > 0:
        counts += rng.poisson(lam, counts.size)
    if arm.dead_time_regime == "binary_per_pulse":
        np.minimum(counts, 1, out=counts)
    return counts


def coincide(c_s, c_i):
    return c_s >= 1 and c_i >= 1


def accidental_rate(p_s, p_i, timing):
    """Per-gate accidental coincidence probability ``p_s * p_i * K``.

    ``timing`` is a :class:`TimingConfig` or the factor K itself. Run
    totals convert as ``N_ac = N_1 * N_2 * K / n_pulses``.
    """
    k = timing.accidental_factor if isinstance(timing, TimingConfig) else float(timing)
    return check_probability(p_s, "p_s") * check_probability(p_i, "p_i") * k


def _seed_sequence(seed, stream, index):
    return np.random.SeedSequence(entropy=int(seed), spawn_key=(*stream, index))


def _run_batch(source, arm_s, arm_i, timing, size, seed, stream, index):
    rng = np.random.default_rng(_seed_sequence(seed, stream, index))
    n_s, n_i = sample_batch(source, size, rng)
    c_s = detect_batch(n_s, arm_s, rng, timing)
    c_i = detect_batch(n_i, arm_i, rng, timing)
    return block_totals(c_s, c_i)


def default_batch_size(n_pulses):
    return max(1, min(MAX_BATCH, -(-n_pulses // MIN_BLOCKS)))


def run_pulses(source, arm_s, arm_i, timing, n_pulses, seed, *, batch_size=None, stream=(), threads=1):
    """Simulate ``n_pulses`` gates and return their :class:`CountsSummary`.

    Pulses are processed in batches, each drawing from its own stream derived
    from ``(seed, stream, batch index)``; the result is bit-identical for any
    ``threads`` value. Batches become the bootstrap blocks of the summary.
    """
    n_pulses = check_positive_int(n_pulses, "n_pulses")
    if batch_size is None:
        batch_size = default_batch_size(n_pulses)
    batch_size = check_positive_int(batch_size, "batch_size")
    stream = tuple(int(s) for s in stream)
    sizes = [batch_size] * (n_pulses // batch_size)
    if n_pulses % batch_size:
        sizes.append(n_pulses % batch_size)

    def work(index):
        return _run_batch(source, arm_s, arm_i, timing, sizes[index], seed, stream, index)

    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(work, range(len(sizes))))
    else:
        rows = [work(i) for i in range(len(sizes))]
    return CountsSummary.from_blocks(np.vstack(rows))


def simulate_records(source, arm_s, arm_i, timing, n_pulses, seed):
    """Materialise per-gate records as an ``(n_pulses, 2)`` count array.

    Meant for small runs and for feeding the estimators' array interface;
    use :func:`run_pulses` for long runs.
    """
    rng = np.random.default_rng(_seed_sequence(seed, (), 0))
    n_s, n_i = sample_batch(source, n_pulses, rng)
    return np.column_stack([detect_batch(n_s, arm_s, rng, timing), detect_batch(n_i, arm_i, rng, timing)])
