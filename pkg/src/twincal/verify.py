"""Quick oracle cross-checks run by ``twincal --verify`` before a sweep."""

import logging

from .detection import ArmConfig, TimingConfig, run_pulses
from .estimators import nrf_model, solve_qe_from_nrf
from .counts import moment_standard_errors
from .oracle import enumerated_click_prob, exact_click_prob, exact_joint_moments
from .source import SourceConfig

logger = logging.getLogger(__name__)

MC_PULSES = 200_000


def _check(name, ok, detail=""):
    logger.info("verify %-40s %s %s", name, "ok" if ok else "FAILED", detail)
    return (name, bool(ok), detail)


def run_checks(seed=0):
    """Return a list of ``(name, passed, detail)`` tuples."""
    results = []
    for modes, mu, p in ((1, 0.3, 0.4), (2, 0.01, 0.256), (3, 0.5, 0.9)):
        a, b = exact_click_prob(modes, mu, p), enumerated_click_prob(modes, mu, p)
        results.append(_check(f"click prob M={modes} mu={mu} p={p}", abs(a - b) <= 1e-12, f"|diff|={abs(a - b):.2e}"))

    for modes, mu, p in ((1, 0.5, 0.3), (3, 0.2, 0.7)):
        m = exact_joint_moments(SourceConfig(modes, mu, 1.0), p, p, "none")
        err = abs(m.nrf - (1.0 - p))
        results.append(_check(f"balanced NRF M={modes} p={p}", err <= 1e-10, f"|NRF-(1-p)|={err:.2e}"))

    for eta_i, eta_s, n_plus in ((0.3, 0.3, 0.02), (0.2, 0.4, 0.03), (0.05, 0.9, 0.04)):
        nrf = nrf_model(eta_i, eta_s, n_plus, True)
        err = abs(solve_qe_from_nrf(nrf, eta_i / eta_s, n_plus, True) - eta_i)
        results.append(_check(f"round trip eta_i={eta_i} eta_s={eta_s}", err <= 1e-10, f"|err|={err:.2e}"))

    source = SourceConfig(2, 0.3, 0.5)
    for regime in ("none", "binary_per_pulse"):
        arm_s = ArmConfig(eta0=0.6, dead_time_regime=regime)
        arm_i = ArmConfig(eta0=0.35, dead_time_regime=regime)
        summary = run_pulses(source, arm_s, arm_i, TimingConfig(), MC_PULSES, seed, stream=(regime == "none",))
        exact = exact_joint_moments(source, 0.6, 0.35, regime)
        se = moment_standard_errors(summary)
        mc = {
            "mean_s": summary.mean_s,
            "mean_i": summary.mean_i,
            "var_minus": summary.var_minus,
            "mean_plus": summary.mean_plus,
            "coincidence_prob": summary.coincidence_prob,
        }
        worst = max(abs(mc[k] - getattr(exact, k)) / se[k] for k in mc)
        results.append(_check(f"MC vs oracle ({regime})", worst <= 4.0, f"max |z|={worst:.2f}"))
    return results
