"""Accumulated photocount totals for a run of pulses."""

from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import InvalidParameterError
from .validation import check_count_records

# column order of the per-block table
BLOCK_FIELDS = ("n_pulses", "N_s", "N_i", "N_c", "sum_minus", "sum_minus_sq", "sum_plus")


@dataclass(frozen=True, eq=False)
class CountsSummary:
    """Totals and second moments over a run.

    ``blocks`` optionally holds one row per batch with the same totals
    (columns in :data:`BLOCK_FIELDS` order). It is what the block bootstrap
    resamples; summaries without it cannot report a standard error.
    """

    n_pulses: int
    N_s: float
    N_i: float
    N_c: float
    sum_minus: float
    sum_minus_sq: float
    sum_plus: float
    blocks: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.n_pulses < 1:
            raise InvalidParameterError("n_pulses must be >= 1")

    def __eq__(self, other):
        if not isinstance(other, CountsSummary):
            return NotImplemented
        same_blocks = (self.blocks is None and other.blocks is None) or (
            self.blocks is not None and other.blocks is not None and np.array_equal(self.blocks, other.blocks)
        )
        return self.totals() == other.totals() and same_blocks

    def totals(self):
        return tuple(getattr(self, name) for name in BLOCK_FIELDS)

    @property
    def mean_s(self):
        return self.N_s / self.n_pulses

    @property
    def mean_i(self):
        return self.N_i / self.n_pulses

    @property
    def mean_plus(self):
        return self.sum_plus / self.n_pulses

    @property
    def coincidence_prob(self):
        return self.N_c / self.n_pulses

    @property
    def var_minus(self):
        """Unbiased per-pulse sample variance of ``c_s - c_i``."""
        n = self.n_pulses
        if n < 2:
            raise InvalidParameterError("variance needs at least 2 pulses")
        return (self.sum_minus_sq - self.sum_minus**2 / n) / (n - 1)

    @classmethod
    def from_blocks(cls, blocks):
        blocks = np.asarray(blocks, dtype=np.float64)
        totals = blocks.sum(axis=0)
        n, N_s, N_i, N_c, s1, s2, sp = (float(v) for v in totals)
        return cls(int(n), N_s, N_i, N_c, s1, s2, sp, blocks=blocks)

    @classmethod
    def from_records(cls, records, n_blocks=64):
        """Summarise an ``(n_pulses, 2)`` array of per-gate counts."""
        records = check_count_records(records)
        c_s, c_i = records[:, 0], records[:, 1]
        n_blocks = max(1, min(n_blocks, len(records)))
        rows = [block_totals(s, i) for s, i in zip(np.array_split(c_s, n_blocks), np.array_split(c_i, n_blocks))]
        return cls.from_blocks(rows)

    def without_blocks(self):
        return replace(self, blocks=None)


def block_totals(c_s, c_i):
    """One :data:`BLOCK_FIELDS` row for a batch of gate counts."""
    c_s = np.asarray(c_s, dtype=np.int64)
    c_i = np.asarray(c_i, dtype=np.int64)
    d = c_s - c_i
    coincident = np.count_nonzero((c_s >= 1) & (c_i >= 1))
    return np.array(
        [c_s.size, c_s.sum(), c_i.sum(), coincident, d.sum(), (d * d).sum(), c_s.sum() + c_i.sum()],
        dtype=np.float64,
    )


def block_moments(summary):
    """Per-block estimates of the run moments, for batch-means errors.

    Returns a dict of arrays keyed by ``mean_s``, ``mean_i``, ``var_minus``,
    ``mean_plus`` and ``coincidence_prob``.
    """
    if summary.blocks is None:
        raise InvalidParameterError("summary carries no block table")
    b = summary.blocks
    n = b[:, 0]
    mean_minus = b[:, 4] / n
    return {
        "mean_s": b[:, 1] / n,
        "mean_i": b[:, 2] / n,
        "var_minus": (b[:, 5] - n * mean_minus**2) / (n - 1),
        "mean_plus": b[:, 6] / n,
        "coincidence_prob": b[:, 3] / n,
    }


def moment_standard_errors(summary):
    """Batch-means standard errors of the run moments."""
    per_block = block_moments(summary)
    k = summary.blocks.shape[0]
    if k < 2:
        raise InvalidParameterError("need at least 2 blocks")
    return {name: float(np.std(v, ddof=1) / np.sqrt(k)) for name, v in per_block.items()}
