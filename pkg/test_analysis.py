import math

import numpy as np
import pytest

from application.services.analysis.noise_audit_service import (
    flow_sde_total_noise_closed_form,
    monte_carlo_noise_level,
    noise_curve,
    taylor_gap,
    terminal_variance_audit,
    theorem1_error,
    total_noise_level,
    vp_sde_coeff_drift,
)
from application.services.sampling.coefficients import cpws_coefficients, flow_sde_coefficients
from application.services.schedule_service import sigma_for_step, uniform_grid
from application.services.velocity import DeltaOracle, GaussianOracle
from core.exceptions import ConfigurationError, RadicandError, UnsupportedVelocityError
from domain.entities.analysis import CurveFlag
from domain.entities.sampler import SamplerFamily, SamplerKind
from domain.entities.schedule import SigmaKind, SigmaRule

DANCE = SigmaKind.DANCE_GRPO
FLOW = SigmaKind.FLOW_GRPO


def test_total_noise_level_examples():
    assert total_noise_level(0.3, 0.4) == pytest.approx(0.5, abs=1e-16)
    assert total_noise_level(0.4, 0.0) == 0.4


def test_flow_sde_total_noise_above_ideal():
    coeffs = flow_sde_coefficients(0.5, 0.1, SigmaRule(kind=DANCE, eta=0.3))
    assert coeffs.pred_noise == pytest.approx(0.391)
    assert coeffs.fresh_noise == pytest.approx(0.0948683, rel=1e-6)
    level = total_noise_level(coeffs.pred_noise, coeffs.fresh_noise)
    assert level == pytest.approx(0.40234, abs=1e-5)
    assert level == pytest.approx(flow_sde_total_noise_closed_form(0.5, 0.1, 0.3), rel=1e-14)


@pytest.mark.parametrize("eta", [0.1, 0.5, 0.9, 1.0])
def test_cps_curve_has_no_error(eta):
    curve = noise_curve(SamplerKind.cps(eta), uniform_grid(16))
    for point in curve.points:
        assert abs(point.actual - point.ideal) <= 4 * np.spacing(max(point.ideal, 1e-300))
    assert curve.flag_counts()[CurveFlag.OK.value] == 16


@pytest.mark.parametrize("rule", [DANCE, FLOW])
@pytest.mark.parametrize("eta", [0.3, 0.7])
@pytest.mark.parametrize("K", [4, 8])
def test_flow_sde_excess_noise_identity(rule, eta, K):
    kind = SamplerKind.flow_sde(rule, eta)
    grid = uniform_grid(K)
    curve = noise_curve(kind, grid)
    for (t, dt), point in zip(grid.transitions(), curve.points):
        sigma = sigma_for_step(kind.sigma_rule, t, dt)
        s = t - dt
        if sigma > 0 and s > 0:
            assert point.actual > point.ideal
        if point.flag == CurveFlag.OK and sigma > 0:
            excess = (sigma * dt) ** 2 / t + (sigma * sigma * dt / (2 * t)) ** 2
            assert point.actual ** 2 - s * s == pytest.approx(excess, rel=1e-12)


@pytest.mark.parametrize("rule, eta", [(DANCE, 0.3), (FLOW, 0.7)])
def test_flow_sde_error_shrinks_with_finer_grids(rule, eta):
    kind = SamplerKind.flow_sde(rule, eta)
    errors = [noise_curve(kind, uniform_grid(K)).error_at(0.5) for K in (4, 16, 1000)]
    assert errors[0] > errors[1] > errors[2] > 0


def test_dance_relative_error_grows_towards_zero():
    curve = noise_curve(SamplerKind.flow_sde(DANCE, 0.7), uniform_grid(16))
    interior = [p for p in curve.points if p.t_next > 0]
    relative = [p.error / p.ideal for p in interior]
    assert all(later > earlier for earlier, later in zip(relative, relative[1:]))
    assert relative[-1] > 100 * curve.error_at(0.5) / 0.5


def test_negative_pred_noise_is_flagged():
    curve = noise_curve(SamplerKind.flow_sde(DANCE, 1.0), uniform_grid(4))
    assert curve.points[-1].flag == CurveFlag.NEGATIVE_PRED_NOISE
    assert curve.points[-1].actual is not None


def test_cpws_radicand_becomes_gap():
    curve = noise_curve(SamplerKind.cpws(DANCE, 1.0), uniform_grid(4))
    flags = [p.flag for p in curve.points]
    assert flags[:2] == [CurveFlag.OK, CurveFlag.OK]
    assert flags[2:] == [CurveFlag.RADICAND_GAP, CurveFlag.RADICAND_GAP]
    assert curve.points[2].actual is None
    assert curve.max_error()[0] is not None


def test_patched_curve_is_bounded_near_zero():
    curve = noise_curve(SamplerKind.patched(0.7), uniform_grid(1000))
    errors = [abs(p.error) for p in curve.points]
    assert all(math.isfinite(e) for e in errors)
    assert max(errors) < 0.1


def test_noise_curve_rejects_ddim():
    with pytest.raises(ConfigurationError):
        noise_curve(SamplerKind(family=SamplerFamily.DDIM_REF), uniform_grid(4))


def test_theorem1_error_vanishes_without_noise():
    assert theorem1_error(0.5, 0.1, 0.0).predicted_error == 0.0


def test_theorem1_error_matches_excess():
    budget = theorem1_error(0.5, 0.1, 0.3)
    closed = flow_sde_total_noise_closed_form(0.5, 0.1, 0.3)
    assert budget.predicted_error ** 2 == pytest.approx(closed ** 2 - 0.4 ** 2, rel=1e-12)


@pytest.mark.parametrize("kind", [DANCE, FLOW])
@pytest.mark.parametrize("K", [4, 16, 1000])
def test_theorem1_error_bounds_the_coefficient_gap(kind, K):
    rule = SigmaRule(kind=kind, eta=0.3)
    checked = 0
    for t, dt in uniform_grid(K).transitions():
        try:
            cpws = cpws_coefficients(t, dt, rule).pred_noise
        except RadicandError:
            continue
        sde = flow_sde_coefficients(t, dt, rule).pred_noise
        budget = theorem1_error(t, dt, sigma_for_step(rule, t, dt))
        assert abs(cpws - sde) <= budget.predicted_error + 1e-12
        checked += 1
    assert checked >= K // 2


def test_taylor_gap_is_second_order():
    gaps = [taylor_gap(0.5, dt, 0.3).gap_to_flow_sde for dt in (0.1, 0.05, 0.025, 0.0125)]
    for coarse, fine in zip(gaps, gaps[1:]):
        assert coarse / fine >= 3.5


def test_taylor_gap_intermediate_is_closer():
    gap = taylor_gap(0.5, 0.05, 0.3)
    assert gap.gap_to_intermediate < gap.gap_to_flow_sde


def test_vp_drift():
    assert vp_sde_coeff_drift(0.0, 0.3) == 0.0
    assert vp_sde_coeff_drift(1.0, 0.1) == pytest.approx(0.0025, abs=1e-15)
    for beta in (0.5, 1.0, 2.0):
        for dt in (0.1, 0.01):
            assert vp_sde_coeff_drift(beta, dt) == pytest.approx(beta ** 2 * dt ** 2 / 4, abs=1e-15)
    assert vp_sde_coeff_drift(1.0, 0.05) / vp_sde_coeff_drift(1.0, 0.1) == pytest.approx(0.25, rel=1e-9)


@pytest.mark.parametrize("kind", [SamplerKind.cps(0.3), SamplerKind.flow_sde(DANCE, 0.3)], ids=lambda k: k.label)
def test_monte_carlo_noise_level_matches_analytic(kind):
    estimate = monte_carlo_noise_level(kind, 0.5, 0.1, draws=100_000, seed=0, data_dim=1)
    assert estimate.within(3.0)


def test_monte_carlo_fixed_prediction_sees_only_fresh_noise():
    estimate = monte_carlo_noise_level(
        SamplerKind.cps(0.5), 0.5, 0.1, draws=50_000, seed=1, data_dim=1, resample_pred_noise=False
    )
    assert estimate.expected == pytest.approx(0.4 * math.sin(math.pi / 4))
    assert estimate.within(4.0)


def test_terminal_audit_cps_is_clean():
    rmse = terminal_variance_audit(SamplerKind.cps(0.9), DeltaOracle([1.0, -1.0]), uniform_grid(8), 10_000, seed=0)
    assert rmse <= 1e-10


def test_terminal_audit_ode_is_clean():
    rmse = terminal_variance_audit(SamplerKind.ode(), DeltaOracle([1.0, -1.0]), uniform_grid(8), 1000, seed=0)
    assert rmse <= 1e-10


def test_terminal_audit_flow_sde_is_noisy():
    rmse = terminal_variance_audit(
        SamplerKind.flow_sde(DANCE, 0.9), DeltaOracle([1.0, -1.0]), uniform_grid(8), 10_000, seed=0
    )
    assert rmse > 1e-2


def test_terminal_audit_grows_with_eta():
    field = DeltaOracle([0.0, 0.0])
    rmses = [
        terminal_variance_audit(SamplerKind.flow_sde(DANCE, eta), field, uniform_grid(8), 2000, seed=4)
        for eta in (0.1, 0.3, 0.7, 0.9)
    ]
    assert all(b >= a for a, b in zip(rmses, rmses[1:]))


def test_terminal_audit_independent_of_workers():
    kind = SamplerKind.flow_sde(DANCE, 0.5)
    field = DeltaOracle([0.5, 0.5])
    one = terminal_variance_audit(kind, field, uniform_grid(4), 1000, seed=2, workers=1)
    many = terminal_variance_audit(kind, field, uniform_grid(4), 1000, seed=2, workers=3)
    assert one == many


def test_terminal_audit_requires_delta_oracle():
    with pytest.raises(UnsupportedVelocityError):
        terminal_variance_audit(SamplerKind.cps(0.5), GaussianOracle(1.0), uniform_grid(4), 1000, seed=0)


def test_terminal_audit_requires_enough_rollouts():
    with pytest.raises(ValueError):
        terminal_variance_audit(SamplerKind.cps(0.5), DeltaOracle([0.0]), uniform_grid(4), 10, seed=0)
