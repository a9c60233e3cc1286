import itertools
import warnings

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from twincal.counts import CountsSummary
from twincal.detection import ArmConfig, run_pulses, simulate_records
from twincal.estimators import (
    DifferenceSignalCalibrator,
    KlyshkoCalibrator,
    dead_time_term,
    estimate_difference_signal,
    estimate_klyshko,
    klyshko_qe,
    measured_ratio,
    nrf_empirical,
    nrf_model,
    solve_qe_from_nrf,
    solve_qe_numeric,
    standard_errors,
    subtract_background,
)
from twincal.exceptions import (
    DegenerateDenominatorError,
    InconsistentInputsWarning,
    InsufficientDataError,
    InvalidParameterError,
    NoPhysicalSolutionError,
    NoSignalError,
    OverSubtractionError,
    SingularParametersError,
    ValidityWarning,
)
from twincal.source import SourceConfig

BINARY = "binary_per_pulse"


# -- symbolic reference for the dead-time model

ei, es, N, eta, x, r = sp.symbols("eta_i eta_s N eta x r", positive=True)
SUM = ei + es
DELTA = N * (ei * es / SUM - (ei**2 + es**2 + ei**2 * es**2) / SUM**2 + 2 * ei**2 * es**2 / SUM**3)
NRF_DT = 1 - 2 * ei * es / SUM + DELTA


def test_balanced_dead_time_term_reduces_symbolically():
    reduced = sp.simplify(DELTA.subs({ei: eta, es: eta}) / N)
    assert sp.simplify(reduced - (sp.Rational(3, 4) * eta - sp.Rational(1, 2) - eta**2 / 4)) == 0
    value = NRF_DT.subs({ei: sp.Rational(1, 4), es: sp.Rational(1, 4), N: sp.Rational(1, 50)})
    assert value == sp.Rational(7434375, 10**7)


def test_nrf_model_examples():
    assert nrf_model(0.256, 0.256, 0.03, False) == pytest.approx(0.744, abs=1e-15)
    assert nrf_model(1.0, 1.0, 0.0, False) == 0.0
    assert nrf_model(0.25, 0.25, 0.02, True) == pytest.approx(0.7434375, abs=1e-15)


def test_nrf_model_matches_symbolic_form():
    f = sp.lambdify((ei, es, N), NRF_DT)
    for a, b, n in [(0.2, 0.4, 0.03), (0.9, 0.05, 0.01), (0.5, 0.5, 0.04)]:
        assert nrf_model(a, b, n, True) == pytest.approx(f(a, b, n), abs=1e-14)


def test_nrf_model_errors_and_guards():
    with pytest.raises(SingularParametersError):
        nrf_model(0.0, 0.0, 0.0)
    with pytest.raises(InvalidParameterError):
        nrf_model(1.2, 0.5, 0.0)
    with pytest.raises(InvalidParameterError):
        nrf_model(0.3, 0.3, 0.11, True)
    with pytest.warns(ValidityWarning):
        nrf_model(0.3, 0.3, 0.07, True)
    # the guard applies only to the dead-time form
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        nrf_model(0.3, 0.3, 5.0, False)


@given(e=st.floats(0.001, 1.0), n_plus=st.floats(0.0, 100.0))
def test_balanced_model_is_one_minus_eta(e, n_plus):
    assert nrf_model(e, e, n_plus, False) == pytest.approx(1.0 - e, abs=1e-14)


@given(e_s=st.floats(0.05, 1.0), ratio=st.floats(0.1, 0.95), n=st.floats(0.0, 10.0), dn=st.floats(0.01, 5.0))
def test_unbalance_noise_grows_with_brightness(e_s, ratio, n, dn):
    e_i = e_s * ratio
    assert nrf_model(e_i, e_s, n + dn, False) > nrf_model(e_i, e_s, n, False)


def test_dead_time_term_sign_at_unit_ratio():
    grid = np.linspace(0.01, 0.99, 99)
    for e in grid:
        for n_plus in (0.001, 0.02, 0.1):
            assert dead_time_term(e, e, n_plus) < 0
    # boundary: the term vanishes at unit efficiency
    assert dead_time_term(1.0, 1.0, 0.05) == pytest.approx(0.0, abs=1e-16)


# -- inversion


def test_solve_linear_example():
    assert solve_qe_from_nrf(0.744, 1.0, 0.0, False) == pytest.approx(0.256, abs=1e-15)
    assert solve_qe_from_nrf(0.744, 1.0, 1e-9, False) == pytest.approx(0.256, abs=1e-12)


@pytest.mark.parametrize("e_i, e_s, n", [(0.3, 0.3, 0.02), (0.2, 0.4, 0.03)])
def test_dead_time_round_trip_examples(e_i, e_s, n):
    nrf = nrf_model(e_i, e_s, n, True)
    assert solve_qe_from_nrf(nrf, e_i / e_s, n, True) == pytest.approx(e_i, abs=1e-12)


@pytest.mark.parametrize("e_i, e_s, n", [(0.2, 0.4, 0.03), (0.05, 0.6, 0.01), (0.7, 0.35, 0.04)])
def test_dead_time_inversion_matches_symbolic_solve(e_i, e_s, n):
    ratio = e_i / e_s
    target = sp.Rational(nrf_model(e_i, e_s, n, True))
    equation = NRF_DT.subs({es: x / sp.Rational(ratio), N: sp.Rational(n)}).subs(ei, x) - target
    roots = [complex(root) for root in sp.solve(sp.together(equation).as_numer_denom()[0], x)]
    physical = [z.real for z in roots if abs(z.imag) < 1e-12 and 0 < z.real <= 1]
    assert len(physical) == 1
    assert solve_qe_from_nrf(float(target), ratio, n, True) == pytest.approx(physical[0], abs=1e-12)


@pytest.mark.parametrize("dead_time", [False, True])
def test_closed_form_agrees_with_numeric_solver(dead_time):
    for e_i, ratio, n in itertools.product((0.05, 0.2, 0.45, 0.8), (0.25, 0.5, 1.0, 2.0), (0.0, 0.01, 0.04)):
        e_s = e_i / ratio
        if e_s > 1:
            continue
        nrf = nrf_model(e_i, e_s, n, dead_time)
        closed = solve_qe_from_nrf(nrf, ratio, n, dead_time)
        numeric = solve_qe_numeric(nrf, ratio, n, dead_time)
        assert closed == pytest.approx(numeric, abs=1e-12)


@given(e_i=st.floats(0.01, 1.0), ratio=st.floats(0.05, 20.0), n=st.floats(0.0, 0.04), dead_time=st.booleans())
@settings(max_examples=200)
def test_round_trip_property(e_i, ratio, n, dead_time):
    e_s = e_i / ratio
    if e_s > 1.0:
        return
    nrf = nrf_model(e_i, e_s, n, dead_time)
    if nrf <= 0:
        return
    assert solve_qe_from_nrf(nrf, ratio, n, dead_time) == pytest.approx(e_i, abs=1e-10)


def test_solve_errors():
    with pytest.raises(NoPhysicalSolutionError):
        solve_qe_from_nrf(1.05, 1.0, 0.0, False)
    with pytest.raises(NoPhysicalSolutionError):
        solve_qe_from_nrf(1.02, 1.0, 0.01, True)
    with pytest.raises(InvalidParameterError):
        solve_qe_from_nrf(0.7, 0.0, 0.01, True)
    with pytest.raises(InvalidParameterError):
        solve_qe_from_nrf(0.0, 1.0, 0.01, True)


# -- Klyshko


def test_klyshko_examples():
    assert klyshko_qe(1000, 100, 4000, 400) == pytest.approx(0.25)
    assert klyshko_qe(250, 250, 1000, 0) == 0.0
    with pytest.raises(DegenerateDenominatorError):
        klyshko_qe(10, 0, 100, 100)
    with pytest.warns(InconsistentInputsWarning):
        assert klyshko_qe(500, 0, 400, 0) == 1.25


def test_klyshko_result_is_clamped_and_flagged():
    signal = CountsSummary.from_blocks(np.tile([100, 40, 40, 40, 0, 0, 80], (60, 1)).astype(float))
    # background clicks in the reference arm push the corrected ratio above 1
    background = CountsSummary.from_blocks(np.tile([100, 10, 0, 0, 10, 10, 10], (60, 1)).astype(float))
    result = estimate_klyshko(signal, background, accidental_factor=1e-9)
    assert result.eta == 1.0
    assert "eta_above_1" in result.flags


# -- empirical NRF, ratio, background


def summary_of(c_s, c_i):
    return CountsSummary.from_records(np.column_stack([c_s, c_i]))


def test_nrf_empirical_basics():
    assert nrf_empirical(summary_of([1, 0, 2, 1], [1, 0, 2, 1])) == 0.0
    with pytest.raises(NoSignalError):
        nrf_empirical(summary_of([0, 0, 0], [0, 0, 0]))
    c_s, c_i = np.array([1, 0, 2, 0, 1]), np.array([0, 0, 1, 1, 1])
    expected = np.var(c_s - c_i, ddof=1) / np.mean(c_s + c_i)
    assert nrf_empirical(summary_of(c_s, c_i)) == pytest.approx(expected)


def test_measured_ratio(timing):
    assert measured_ratio(summary_of([1, 1, 0, 1], [1, 0, 0, 0])) == pytest.approx(1 / 3)
    with pytest.raises(NoSignalError):
        measured_ratio(summary_of([0, 0], [1, 0]))
    with pytest.warns(InconsistentInputsWarning):
        assert measured_ratio(summary_of([1, 0], [0, 0])) == 0.0

    source = SourceConfig(50, 0.02, 1.0)
    arm = ArmConfig(eta0=0.4, dead_time_regime="none")
    half = ArmConfig(eta0=0.4, transmission=0.5, dead_time_regime="none")
    for arm_i, target in ((arm, 1.0), (half, 0.5)):
        s = run_pulses(source, arm, arm_i, timing, 10**6, seed=21)
        ratios = s.blocks[:, 2] / s.blocks[:, 1]
        se = ratios.std(ddof=1) / np.sqrt(len(ratios))
        assert abs(measured_ratio(s) - target) <= 4 * se


def test_background_identity_and_over_subtraction(operating_point, timing):
    source, arm_s, arm_i = operating_point
    signal = run_pulses(source, arm_s, arm_i, timing, 100_000, seed=1)
    zeros = CountsSummary(100_000, 0, 0, 0, 0, 0, 0)
    for regime in ("none", BINARY):
        corrected = subtract_background(signal, zeros, regime=regime)
        assert corrected.N_s == pytest.approx(signal.N_s)
        assert corrected.N_i == pytest.approx(signal.N_i)
        assert corrected.N_c == pytest.approx(signal.N_c)
        assert corrected.var_minus == pytest.approx(signal.var_minus)
    blocked = SourceConfig(source.modes, source.mean_per_mode, kind="dark_only")
    noisy = ArmConfig(eta0=0.257, dark_prob=0.01, dead_time_regime=BINARY)
    bg_a = run_pulses(blocked, noisy, noisy, timing, 100_000, seed=2)
    bg_b = run_pulses(blocked, noisy, noisy, timing, 100_000, seed=3)
    with pytest.raises(OverSubtractionError):
        # one of the two orders must come out non-positive
        subtract_background(bg_a, bg_b, regime=BINARY)
        subtract_background(bg_b, bg_a, regime=BINARY)


@pytest.mark.parametrize("regime", ["none", BINARY])
def test_background_subtraction_recovers_klyshko_efficiency(timing, regime):
    source = SourceConfig(100, 0.0008 if regime == BINARY else 0.002, 1.0)
    clean = ArmConfig(eta0=0.3, dead_time_regime=regime)
    noisy = ArmConfig(eta0=0.3, dark_prob=0.004, bg_rate=5e4, dead_time_regime=regime)
    n = 4_000_000
    # matched seeds: the PDC draws are identical with and without background
    signal = run_pulses(source, noisy, noisy, timing, n, seed=31)
    background = run_pulses(SourceConfig(kind="dark_only"), noisy, noisy, timing, n, seed=32)
    reference = run_pulses(source, clean, clean, timing, n, seed=31)
    dt = regime == BINARY
    with_bg = estimate_klyshko(signal, background, accidental_factor=1.0 if not dt else 0.65, dead_time=dt)
    without = estimate_klyshko(reference, accidental_factor=1.0 if not dt else 0.65, dead_time=dt)
    assert abs(with_bg.eta - without.eta) <= 3 * with_bg.std_err
    if dt:
        assert abs(without.eta - 0.3) <= 3 * without.std_err


# -- standard errors


def test_standard_error_scaling(operating_point, timing):
    source, arm_s, arm_i = operating_point
    small = run_pulses(source, arm_s, arm_i, timing, 10**6, seed=41)
    large = run_pulses(source, arm_s, arm_i, timing, 2 * 10**6, seed=42)
    for method in ("klyshko", "difference_signal"):
        ratio = standard_errors(large, method, dead_time=True, n_boot=400) / standard_errors(
            small, method, dead_time=True, n_boot=400
        )
        assert ratio == pytest.approx(1 / np.sqrt(2), rel=0.2)


def test_standard_error_zero_variance():
    blocks = np.tile([1000, 100, 100, 50, 0, 100, 200], (64, 1)).astype(float)
    summary = CountsSummary.from_blocks(blocks)
    assert standard_errors(summary, "klyshko") == 0.0
    assert standard_errors(summary, "nrf") == 0.0


def test_standard_error_needs_data():
    with pytest.raises(InsufficientDataError):
        standard_errors(CountsSummary.from_records(np.ones((50, 2))), "klyshko")
    few_blocks = CountsSummary.from_records(np.ones((500, 2)), n_blocks=10)
    with pytest.raises(InsufficientDataError):
        standard_errors(few_blocks, "klyshko")


def test_operating_point_precision(operating_point, timing):
    source, arm_s, arm_i = operating_point
    summary = run_pulses(source, arm_s, arm_i, timing, 10**7, seed=43)
    assert summary.mean_s == pytest.approx(0.02, rel=0.05)
    for method in ("klyshko", "difference_signal"):
        assert standard_errors(summary, method, dead_time=True) <= 0.004


# -- estimator classes


def test_calibrators_follow_estimator_api(operating_point, timing):
    k = KlyshkoCalibrator(accidental_factor=0.5)
    assert k.get_params()["accidental_factor"] == 0.5
    assert clone(k).set_params(n_boot=50).n_boot == 50
    d = DifferenceSignalCalibrator(dead_time=True)
    assert d.get_params() == {"dead_time": True, "n_blocks": 64, "n_boot": 200, "random_state": 0}

    source, arm_s, arm_i = operating_point
    summary = run_pulses(source, arm_s, arm_i, timing, 2 * 10**6, seed=51)
    fitted = d.fit(summary)
    assert fitted is d
    assert abs(d.eta_ - 0.257) <= 4 * d.std_err_
    assert d.nrf_ == pytest.approx(nrf_empirical(summary))
    assert d.predict() == d.eta_
    assert np.all(d.predict(np.zeros((3, 2))) == d.eta_)
    assert abs(KlyshkoCalibrator().fit(summary).eta_ - 0.257) <= 0.01


def test_calibrator_accepts_count_records(timing):
    arm = ArmConfig(eta0=0.5, dead_time_regime="none")
    records = simulate_records(SourceConfig(20, 0.05, 1.0), arm, arm, timing, 200_000, seed=3)
    d = DifferenceSignalCalibrator().fit(records)
    assert abs(d.eta_ - 0.5) <= 4 * d.std_err_
    with pytest.raises(InvalidParameterError):
        DifferenceSignalCalibrator().fit(np.array([[1, -1], [0, 0]]))
    with pytest.raises(InvalidParameterError):
        DifferenceSignalCalibrator().fit(np.ones((10, 3)))


def test_unfitted_calibrator_raises():
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        KlyshkoCalibrator().predict()


def test_difference_signal_result_fields(operating_point, timing):
    source, arm_s, arm_i = operating_point
    summary = run_pulses(source, arm_s, arm_i, timing, 10**6, seed=52)
    result = estimate_difference_signal(summary, dead_time=True)
    assert result.method == "difference_signal"
    assert result.mean_n_plus == pytest.approx(summary.mean_plus)
    assert result.ratio_r == pytest.approx(summary.N_i / summary.N_s)
    assert 0 <= result.eta <= 1 and result.std_err >= 0
