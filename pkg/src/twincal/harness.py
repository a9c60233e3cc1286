"""Scenario files, parameter sweeps and CSV output."""

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .detection import ArmConfig, TimingConfig, run_pulses
from .estimators import estimate_difference_signal, estimate_klyshko, with_flags
from .exceptions import ConfigError, TwincalError
from .source import SourceConfig, aperture_overlap

SWEEPS = {
    "transmission": "transmission",
    "background": "bg_rate",
    "wavelength": "lambda_i",
    "brightness": "mean_per_mode",
    "none": "none",
}

CSV_HEADER = (
    "scenario",
    "sweep_param",
    "sweep_value",
    "method",
    "eta",
    "std_err",
    "nrf",
    "ratio_r",
    "mean_n_plus",
    "n_s",
    "n_i",
    "n_c",
    "n_pulses",
    "seed",
    "flags",
)

BUILTIN_SCENARIOS = ("default", "transmission", "background", "wavelength")

# run streams within a sweep point
_SIGNAL, _BACKGROUND, _KLYSHKO, _BOOTSTRAP = range(4)


@dataclass(frozen=True)
class Geometry:
    """Aperture diameters (mm) and central wavelengths (nm) of the two arms."""

    lambda_s: float = 650.0
    lambda_i: float = 780.0
    d_s: float = 5.0
    d_i: float = 6.0
    pump_wavelength: float | None = None
    adjust_apertures: bool = True

    def overlap(self):
        return aperture_overlap(self.d_s, self.d_i, self.lambda_s, self.lambda_i)

    def at_idler_wavelength(self, lambda_i):
        """Geometry retuned to a new idler wavelength.

        The signal wavelength follows from energy conservation when
        ``pump_wavelength`` is set. With ``adjust_apertures`` the idler
        aperture is rescaled to keep conjugate modes matched.
        """
        lambda_s = self.lambda_s
        if self.pump_wavelength is not None:
            inv = 1.0 / self.pump_wavelength - 1.0 / lambda_i
            if inv <= 0:
                raise ConfigError(f"idler wavelength {lambda_i} nm is not reachable from the pump")
            lambda_s = 1.0 / inv
        d_i = self.d_s * lambda_i / lambda_s if self.adjust_apertures else self.d_i
        return replace(self, lambda_s=lambda_s, lambda_i=lambda_i, d_i=d_i)


@dataclass(frozen=True)
class Scenario:
    name: str
    sweep: str
    sweep_values: tuple
    source: SourceConfig
    arm_s: ArmConfig
    arm_i: ArmConfig
    timing: TimingConfig = field(default_factory=TimingConfig)
    n_pulses: int = 1_000_000
    seed: int = 0
    qe_curve: tuple | None = None
    geometry: Geometry | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.sweep not in SWEEPS:
            raise ConfigError(f"sweep must be one of {sorted(SWEEPS)}, got {self.sweep!r}")
        if not self.sweep_values:
            raise ConfigError("sweep_values must be non-empty")
        if isinstance(self.n_pulses, bool) or int(self.n_pulses) != self.n_pulses or self.n_pulses < 100:
            raise ConfigError(f"n_pulses must be an integer >= 100, got {self.n_pulses!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if (self.qe_curve is not None) != (self.sweep == "wavelength"):
            raise ConfigError("qe_curve is required for, and only for, a wavelength sweep")
        if self.sweep == "wavelength":
            if self.geometry is None:
                raise ConfigError("a wavelength sweep needs a geometry block")
            wl = [w for w, _ in self.qe_curve]
            if wl != sorted(wl) or len(set(wl)) != len(wl):
                raise ConfigError("qe_curve wavelengths must be strictly increasing")
            for v in self.sweep_values:
                if not wl[0] <= v <= wl[-1]:
                    raise ConfigError(f"sweep wavelength {v} is outside the qe_curve range")
        for v in self.sweep_values:
            if not math.isfinite(v):
                raise ConfigError("sweep values must be finite")
            if self.sweep == "transmission" and not 0.0 <= v * self.arm_i.transmission <= 1.0:
                raise ConfigError(f"transmission factor {v} leaves [0, 1]")
            if self.sweep in ("background", "brightness") and v < 0:
                raise ConfigError(f"{self.sweep} values must be non-negative")
            if self.sweep == "wavelength" and v <= 0:
                raise ConfigError("wavelengths must be positive")

    def qe_at(self, wavelength):
        wl, qe = zip(*self.qe_curve)
        return float(np.interp(wavelength, wl, qe))


def _build(cls, data, section):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{section} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in {section}: {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def scenario_from_dict(data):
    if not isinstance(data, dict):
        raise ConfigError("scenario must be a JSON object")
    known = {f.name for f in fields(Scenario)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
    for key in ("name", "sweep", "source", "arm_s", "arm_i"):
        if key not in data:
            raise ConfigError(f"missing scenario key {key!r}")
    values = data.get("sweep_values", [0.0] if data.get("sweep") == "none" else [])
    try:
        sweep_values = tuple(float(v) for v in values)
        qe_curve = None
        if data.get("qe_curve") is not None:
            qe_curve = tuple((float(w), float(q)) for w, q in data["qe_curve"])
            for _, q in qe_curve:
                if not 0.0 <= q <= 1.0:
                    raise ConfigError(f"qe_curve efficiency {q} outside [0, 1]")
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad sweep_values or qe_curve: {exc}") from exc
    return Scenario(
        name=str(data["name"]),
        sweep=data["sweep"],
        sweep_values=sweep_values,
        source=_build(SourceConfig, data["source"], "source"),
        arm_s=_build(ArmConfig, data["arm_s"], "arm_s"),
        arm_i=_build(ArmConfig, data["arm_i"], "arm_i"),
        timing=_build(TimingConfig, data.get("timing"), "timing"),
        n_pulses=data.get("n_pulses", 1_000_000),
        seed=data.get("seed", 0),
        qe_curve=qe_curve,
        geometry=None if data.get("geometry") is None else _build(Geometry, data["geometry"], "geometry"),
        metadata=dict(data.get("metadata", {})),
    )


def scenario_to_dict(scenario):
    out = asdict(scenario)
    out["sweep_values"] = list(scenario.sweep_values)
    if scenario.qe_curve is not None:
        out["qe_curve"] = [list(p) for p in scenario.qe_curve]
    return out


def load_scenario(path):
    """Read a scenario JSON file, or a built-in scenario by name."""
    if str(path) in BUILTIN_SCENARIOS:
        text = resources.files("twincal.data").joinpath(f"{path}.json").read_text(encoding="utf-8")
    else:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read scenario {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    return scenario_from_dict(data)


def point_configs(scenario, value):
    """Source, arms and overlap for one sweep value."""
    source, arm_s, arm_i, geometry = scenario.source, scenario.arm_s, scenario.arm_i, scenario.geometry
    if scenario.sweep == "transmission":
        arm_i = replace(arm_i, transmission=arm_i.transmission * value)
    elif scenario.sweep == "background":
        arm_i = replace(arm_i, bg_rate=value)
    elif scenario.sweep == "brightness":
        source = replace(source, mean_per_mode=value)
    elif scenario.sweep == "wavelength":
        arm_i = replace(arm_i, eta0=scenario.qe_at(value))
        geometry = geometry.at_idler_wavelength(value)
    if geometry is not None:
        source = replace(source, overlap=geometry.overlap())
    return source, arm_s, arm_i


def _seed_for(scenario, index, purpose):
    return np.random.SeedSequence(entropy=int(scenario.seed), spawn_key=(index, purpose))


def _row(scenario, value, summary, result=None, method=None, error=None):
    row = dict.fromkeys(CSV_HEADER)
    row.update(
        scenario=scenario.name,
        sweep_param=SWEEPS[scenario.sweep],
        sweep_value=value,
        n_s=int(round(summary.N_s)),
        n_i=int(round(summary.N_i)),
        n_c=int(round(summary.N_c)),
        n_pulses=summary.n_pulses,
        seed=int(scenario.seed),
    )
    if result is not None:
        row.update(result.as_row())
        row["flags"] = ";".join(result.flags)
    else:
        row["method"] = method
        row["flags"] = f"error:{type(error).__name__}"
    return row


def _shot_noise_reference(summary, dead_time):
    """NRF of uncorrelated arms: 1, or less for per-pulse binary clicks."""
    if not dead_time:
        return 1.0
    q_s, q_i = summary.mean_s, summary.mean_i
    return 1.0 - (q_s * q_s + q_i * q_i) / (q_s + q_i)


def _quality_flags(result, summary, accidental_factor, dead_time=False):
    flags = []
    if result.method == "klyshko":
        n = summary.n_pulses
        n_ac = accidental_factor * summary.N_s * summary.N_i / n
        if summary.N_c <= 0 or n_ac > 0.5 * summary.N_c:
            flags.append("accidental_dominated")
    else:
        # NRF error propagated back from the eta error
        nrf_se = 2.0 * result.std_err / (result.ratio_r + 1.0)
        if _shot_noise_reference(summary, dead_time) - result.nrf < 3.0 * nrf_se:
            flags.append("no_sub_shot_noise")
    return with_flags(result, *flags) if flags else result


def run_point(scenario, index, value, n_boot=200):
    """Simulate and estimate one sweep point; returns its CSV rows."""
    source, arm_s, arm_i = point_configs(scenario, value)
    timing = scenario.timing
    dead_time = "binary_per_pulse" in (arm_s.dead_time_regime, arm_i.dead_time_regime)
    n = scenario.n_pulses
    seed = int(scenario.seed)

    signal = run_pulses(source, arm_s, arm_i, timing, n, seed, stream=(index, _SIGNAL))
    background = run_pulses(replace(source, kind="dark_only"), arm_s, arm_i, timing, n, seed, stream=(index, _BACKGROUND))
    # reference-arm modes fully covered for coincidence counting
    klyshko_run = signal
    if source.kind == "twin_thermal" and source.overlap < 1.0:
        klyshko_run = run_pulses(replace(source, overlap=1.0), arm_s, arm_i, timing, n, seed, stream=(index, _KLYSHKO))
    boot_seed = _seed_for(scenario, index, _BOOTSTRAP)

    rows = []
    k = timing.accidental_factor
    try:
        res = estimate_klyshko(
            klyshko_run, background, accidental_factor=k, dead_time=dead_time, n_boot=n_boot, random_state=boot_seed
        )
        rows.append(_row(scenario, value, klyshko_run, _quality_flags(res, klyshko_run, k)))
    except TwincalError as exc:
        rows.append(_row(scenario, value, klyshko_run, method="klyshko", error=exc))
    try:
        res = estimate_difference_signal(signal, background, dead_time=dead_time, n_boot=n_boot, random_state=boot_seed)
        rows.append(_row(scenario, value, signal, _quality_flags(res, signal, k, dead_time)))
    except TwincalError as exc:
        rows.append(_row(scenario, value, signal, method="difference_signal", error=exc))
    return rows


def run_scenario(scenario, threads=1, n_boot=200):
    """Run every sweep point; rows come back in sweep order."""
    tasks = list(enumerate(scenario.sweep_values))
    if threads > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_point = list(pool.map(lambda t: run_point(scenario, t[0], t[1], n_boot), tasks))
    else:
        per_point = [run_point(scenario, i, v, n_boot) for i, v in tasks]
    return [row for rows in per_point for row in rows]


def _format(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        # repr gives the shortest round-trip form
        return repr(float(value))
    return str(value)


def emit_csv(table, path):
    """Write result rows to ``path`` (``"-"`` writes to stdout)."""
    if not table:
        raise ValueError("refusing to write an empty table")
    lines = [[_format(row.get(col)) for col in CSV_HEADER] for row in table]
    if str(path) == "-":
        import sys

        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        writer.writerows(lines)
        return None
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        writer.writerows(lines)
    return path


def all_rows_failed(table):
    return all(row["flags"] and str(row["flags"]).startswith("error:") for row in table)
