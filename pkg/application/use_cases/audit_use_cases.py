import logging
from typing import Any, Dict, List, Optional, Tuple

from application.services.analysis.noise_audit_service import (
    flow_sde_total_noise_closed_form,
    monte_carlo_noise_level,
    noise_curve,
    terminal_variance_audit,
    vp_sde_coeff_drift,
)
from application.services.sampling.rollout import rollout, validate_kind_on_grid
from application.services.schedule_service import sigma_for_step
from application.services.seeding import derive_seed
from application.services.velocity import DeltaOracle, VelocityField
from core.exceptions import FlowCpsError, RolloutStepError, UnsupportedVelocityError
from domain.entities.analysis import CurveFlag, NoiseCurve
from domain.entities.experiment import ExperimentConfig
from domain.entities.sampler import SamplerFamily, SamplerKind
from domain.entities.schedule import TimeGrid
from domain.repositories.artifact_repository import ArtifactRepository

logger = logging.getLogger(__name__)

CURVE_HEADER = ["t_next", "ideal", "actual", "flag"]
LATTICE_DIGITS = 12


def matched_lattice(grids: List[TimeGrid]) -> List[float]:
    """t_next values shared by every grid, largest first"""
    shared = None
    for grid in grids:
        points = {round(t, LATTICE_DIGITS) for t in grid.steps[1:]}
        shared = points if shared is None else shared & points
    return sorted(shared or (), reverse=True)


def closed_form_residual(kind: SamplerKind, grid: TimeGrid, curve: NoiseCurve) -> Optional[float]:
    """
    Largest relative gap between the Flow-SDE coefficient form and the closed-form
    total noise level, over steps with sigma > 0 and a non-negative predicted-noise coefficient.
    """
    if kind.family != SamplerFamily.FLOW_SDE:
        return None
    worst = 0.0
    for (t, dt), point in zip(grid.transitions(), curve.points):
        sigma = sigma_for_step(kind.sigma_rule, t, dt)
        if point.actual is None or point.flag != CurveFlag.OK or sigma <= 0.0:
            continue
        closed = flow_sde_total_noise_closed_form(t, dt, sigma)
        worst = max(worst, abs(point.actual - closed) / closed)
    return worst


class AuditUseCases:
    def __init__(self, artifacts: ArtifactRepository):
        self.artifacts = artifacts

    def write_curve(self, curve: NoiseCurve) -> str:
        name = f"{curve.sampler.label}_K{curve.K}.csv"
        self.artifacts.write_csv(
            name,
            CURVE_HEADER,
            ((p.t_next, p.ideal, p.actual, p.flag.value) for p in curve.points),
        )
        return name

    def curve_summary(self, kind: SamplerKind, grid: TimeGrid, lattice: List[float]) -> Dict[str, Any]:
        curve = noise_curve(kind, grid)
        max_error, argmax_t = curve.max_error()
        matched = {f"{t:.12g}": curve.error_at(t, tol=10 ** -LATTICE_DIGITS) for t in lattice}
        matched_values = [e for e in matched.values() if e is not None]
        return {
            "sampler": kind.label,
            "K": grid.K,
            "file": self.write_curve(curve),
            "max_error": max_error,
            "argmax_t": argmax_t,
            "flag_counts": curve.flag_counts(),
            "matched_errors": matched,
            "matched_max_error": max(matched_values) if matched_values else None,
            "closed_form_max_rel_residual": closed_form_residual(kind, grid, curve),
        }

    def monte_carlo_rows(self, kind: SamplerKind, grid: TimeGrid, draws: int, seed: int, data_dim: int):
        rows = []
        for k, (t, dt) in enumerate(grid.transitions()):
            try:
                estimate = monte_carlo_noise_level(kind, t, dt, draws, derive_seed(seed, grid.K, k), data_dim)
            except FlowCpsError as e:
                logger.warning(f"Monte-Carlo audit of {kind.label} skipped t={t}: {e}")
                continue
            z = estimate.z_scores()
            rows.append([
                t,
                dt,
                estimate.expected,
                sum(estimate.std) / len(estimate.std),
                max(abs(v) for v in z),
                estimate.within(3.0),
            ])
        return rows

    def vp_drift_rows(self, beta: float, grids: List[TimeGrid]):
        rows = []
        for dt in sorted({d for grid in grids for d in grid.deltas()}, reverse=True):
            if beta * dt >= 1.0:
                logger.warning(f"VP drift table skips dt={dt}: beta * dt >= 1")
                continue
            rows.append([beta, dt, vp_sde_coeff_drift(beta, dt), beta * beta * dt * dt / 4.0])
        return rows

    def rollable_pairs(self, config: ExperimentConfig, summary: Dict[str, Any]) -> List[Tuple[SamplerKind, TimeGrid]]:
        """(sampler, grid) pairs whose every step is defined; the rest are recorded in summary as skipped"""
        pairs = []
        summary["skipped_rollouts"] = []
        for kind in config.samplers:
            for grid in config.grids:
                try:
                    validate_kind_on_grid(kind, grid)
                except RolloutStepError as e:
                    logger.warning(f"Skipping rollouts of {kind.label} on K={grid.K}: {e}")
                    summary["skipped_rollouts"].append({"sampler": kind.label, "K": grid.K, "reason": str(e)})
                    continue
                pairs.append((kind, grid))
        return pairs

    def run(self, config: ExperimentConfig, velocity: Optional[VelocityField] = None) -> Dict[str, Any]:
        """cmd_audit: noise curves per (sampler, grid) plus the optional audits"""
        self.artifacts.write_manifest(config)
        lattice = matched_lattice(config.grids)
        summary: Dict[str, Any] = {"matched_t": lattice, "curves": []}

        try:
            for kind in config.samplers:
                for grid in config.grids:
                    summary["curves"].append(self.curve_summary(kind, grid, lattice))
            logger.info(f"Wrote {len(summary['curves'])} noise curve(s)")

            pairs = self.rollable_pairs(config, summary)
            if velocity is not None:
                trajectories = self.artifacts.child("trajectories")
                for kind, grid in pairs:
                    traj = rollout(kind, velocity, grid, config.seed)
                    trajectories.write_trajectory(f"{kind.label}_K{grid.K}", traj, with_states=True)

            if config.audit.terminal_rollouts:
                if not isinstance(velocity, DeltaOracle):
                    raise UnsupportedVelocityError("terminal_rollouts needs the delta velocity")
                rows = []
                for kind, grid in pairs:
                    rmse = terminal_variance_audit(kind, velocity, grid, config.audit.terminal_rollouts, config.seed)
                    rows.append([kind.label, grid.K, config.audit.terminal_rollouts, rmse])
                self.artifacts.write_csv("terminal_rmse.csv", ["sampler", "K", "n", "rmse"], rows)
                summary["terminal_rmse"] = {f"{label}_K{K}": rmse for label, K, _, rmse in rows}

            if config.audit.monte_carlo_draws:
                data_dim = velocity.data_dim if velocity is not None else config.velocity.data_dim
                for kind in config.samplers:
                    for grid in config.grids:
                        rows = self.monte_carlo_rows(kind, grid, config.audit.monte_carlo_draws, config.seed, data_dim)
                        self.artifacts.write_csv(
                            f"monte_carlo_{kind.label}_K{grid.K}.csv",
                            ["t", "dt", "expected", "mean_std", "max_abs_z", "within_3se"],
                            rows,
                        )

            if config.audit.vp_beta is not None:
                self.artifacts.write_csv(
                    "vp_drift.csv",
                    ["beta", "dt", "drift", "beta2_dt2_over_4"],
                    self.vp_drift_rows(config.audit.vp_beta, config.grids),
                )
        except Exception as e:
            logger.error(f"Audit failed: {e}")
            raise
        finally:
            self.artifacts.write_json("summary.json", summary)
        return summary
