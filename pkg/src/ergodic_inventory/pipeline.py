"""Study pipeline module.

This module runs the solve, verify, simulate, compare and report stages
against one validated configuration and one output directory.
"""

import dataclasses
import logging
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from ergodic_inventory import report
from ergodic_inventory.artifacts import (
    CERTIFICATE_FILE,
    COMPARE_FILE,
    COMPARE_HEADER,
    EVALUATIONS_FILE,
    EVALUATIONS_HEADER,
    FINGERPRINT_KEY,
    HISTOGRAM_FILE,
    HISTOGRAM_HEADER,
    OPTIMUM_FILE,
    RESIDUALS_FILE,
    RESIDUALS_HEADER,
    SIMULATION_FILE,
    TRACE_FILE,
    TRACE_HEADER,
    ArtifactStore,
)
from ergodic_inventory.config import RunConfig
from ergodic_inventory.costs import validate_cost, validate_holding
from ergodic_inventory.errors import CertificateFailure, ConfigError
from ergodic_inventory.kernel import validate_model
from ergodic_inventory.optimizer import EvaluationTrace, Optimum, optimize
from ergodic_inventory.simulator import (
    CostTrace,
    batch_interval,
    make_ss_policy,
    never_order_policy,
    order_up_to_policy,
    simulate,
    simulate_coupled,
    simulate_reflected,
    truncation_gap_bound,
)
from ergodic_inventory.validation import ValidationReport
from ergodic_inventory.verifier import (
    GridSpec,
    ValueCertificate,
    build_V,
    check_certificate,
    find_z_bar,
    underline_s_search,
)

logger = logging.getLogger(__name__)

VALIDATION_SPAN = 50.0
VALIDATION_POINTS = 401


class StudyRunner:
    """Runs the stages of one study and writes their artifacts."""

    def __init__(self, run: RunConfig, output_dir: Optional[str] = None):
        """Initialize the runner.

        Args:
            run: Validated configuration
            output_dir: Output directory (default: the configured one)
        """
        self.run = run
        self.store = ArtifactStore(output_dir or run.output_dir)
        self.model = run.build_model()
        self.h = run.build_holding()
        self.c = run.build_ordering()

    def validate_inputs(self) -> List[ValidationReport]:
        """Check the model and both costs on sample grids.

        Returns:
            The three validation reports

        Raises:
            ConfigError: If any check fails
        """
        grid = np.linspace(-VALIDATION_SPAN, VALIDATION_SPAN, VALIDATION_POINTS)
        quantities = np.union1d(
            np.geomspace(1e-6, 2.0 * VALIDATION_SPAN, 400),
            [b for b in self.c.breakpoints if b > 0],
        )
        reports = [
            validate_model(self.model, grid),
            validate_holding(self.h, grid),
            validate_cost(self.c, quantities),
        ]
        for rep in reports:
            if rep.passed:
                continue
            for violation in rep.violations[:5]:
                logger.error(
                    f"{rep.subject}: {violation.check} at {violation.location}: "
                    f"{violation.detail}"
                )
            first = rep.violations[0]
            raise ConfigError(
                f"{rep.subject} failed check '{first.check}': {first.detail}"
            )
        logger.debug("Model and costs passed validation")
        return reports

    def solve(self) -> Optimum:
        """Find the optimal (s, S) policy and write optimum.json."""
        self.validate_inputs()
        logger.info(f"Solving for model {self.model.label}")
        trace = EvaluationTrace()
        optimum = optimize(self.model, self.h, self.c, self.run.optimizer, trace=trace)
        self.store.write_json(
            OPTIMUM_FILE, {**optimum.to_dict(), FINGERPRINT_KEY: self.run.fingerprint()}
        )
        self.store.write_csv(EVALUATIONS_FILE, EVALUATIONS_HEADER, trace.rows())
        return optimum

    def _optimum(self) -> Dict[str, Any]:
        """Return the stored optimum, solving first if it is missing or stale."""
        stored = self.store.read_optional_json(OPTIMUM_FILE)
        if stored is None:
            logger.info("No stored optimum, solving first")
            return self.solve().to_dict()
        if stored.get(FINGERPRINT_KEY) != self.run.fingerprint():
            logger.info("Stored optimum was solved for other settings, solving again")
            return self.solve().to_dict()
        return stored

    def verify(self) -> ValueCertificate:
        """Certify the stored optimum and write certificate.json.

        Raises:
            CertificateFailure: If the certificate does not pass; the
                certificate file is written first
        """
        optimum = self._optimum()
        s_star, S_star = float(optimum["s_star"]), float(optimum["S_star"])
        alpha_star = float(optimum["alpha_star"])
        b1 = float(optimum["bracket"]["B1"])
        opts = self.run.verifier

        search = underline_s_search(
            self.model,
            self.h,
            self.c,
            alpha_star,
            s_star,
            S_star=S_star,
            b1=b1,
            opts=opts,
        )
        V = build_V(self.model, self.h, alpha_star, search.underline_s)
        grid = GridSpec.around(s_star, S_star, search.underline_s, opts)
        try:
            z_bar: Optional[float] = find_z_bar(V, max(grid.z_hi, 1.0))
        except CertificateFailure as e:
            logger.warning(f"No growth witness found: {e}")
            z_bar = None
        certificate = check_certificate(
            self.model,
            self.h,
            self.c,
            alpha_star,
            V,
            search.underline_s,
            grid,
            opts=opts,
            z_bar=z_bar,
        )
        certificate = dataclasses.replace(
            certificate,
            underline=search,
            passed=certificate.passed and z_bar is not None,
        )
        self.store.write_json(CERTIFICATE_FILE, certificate.to_dict())
        if self.run.dump_residuals and certificate.residual_z is not None:
            self.store.write_csv(
                RESIDUALS_FILE,
                RESIDUALS_HEADER,
                zip(certificate.residual_z, certificate.residual_values),
            )
        if not certificate.passed:
            raise CertificateFailure(
                f"Certificate failed for alpha*={alpha_star:.10g}",
                offending=_offending(certificate),
            )
        return certificate

    def simulate(self, policy: Optional[str] = None) -> Dict[str, Any]:
        """Simulate the configured policy and write its summary and trace.

        Args:
            policy: Policy kind overriding ``simulation.policy``

        Returns:
            The summary written to simulation.json
        """
        spec = self.run.simulation
        kind = policy or spec.policy
        cfg = spec.sim_config()
        logger.info(f"Simulating policy '{kind}' with seed {cfg.seed}")

        if kind == "reflected":
            result = simulate_reflected(
                self.model, spec.z_b, cfg, spec.x0, span=spec.span, bins=spec.hist_bins
            )
            summary = {"policy": kind, **result.summary()}
            edges = result.bin_edges
            self.store.write_csv(
                HISTOGRAM_FILE,
                HISTOGRAM_HEADER,
                zip(edges[:-1], edges[1:], result.mass),
            )
            self._write_path(result.path)
            self.store.write_json(SIMULATION_FILE, summary)
            return summary

        if kind == "truncated":
            base = order_up_to_policy(spec.base_s, spec.order_up_to)
            base_trace, trace = simulate_coupled(
                self.model, self.h, self.c, base, spec.j, cfg, spec.x0
            )
            summary = {
                "policy": kind,
                **trace.summary(),
                "base": base_trace.summary(),
            }
        else:
            if kind == "ss":
                impulse = make_ss_policy(spec.s, spec.S)
            elif kind == "optimal":
                optimum = self._optimum()
                impulse = make_ss_policy(
                    float(optimum["s_star"]), float(optimum["S_star"])
                )
            elif kind == "never":
                impulse = never_order_policy()
            else:
                raise ConfigError(f"Unknown simulation policy '{kind}'")
            trace = simulate(self.model, self.h, self.c, impulse, cfg, spec.x0)
            summary = {"policy": kind, **trace.summary()}

        summary["seed"] = cfg.seed
        summary["dt"] = cfg.dt
        self._write_path(trace.path)
        self.store.write_json(SIMULATION_FILE, summary)
        return summary

    def _write_path(self, path: Optional[np.ndarray]) -> None:
        if path is None:
            return
        self.store.write_csv(TRACE_FILE, TRACE_HEADER, path.tolist())

    def compare(self, j_list: Optional[List[float]] = None) -> List[Dict[str, Any]]:
        """Compare the base order-up-to policy with its level-j truncations.

        Args:
            j_list: Truncation levels (default: ``simulation.j_list``)

        Returns:
            One row per level, as written to compare.csv

        Raises:
            CouplingFailure: If a truncated path leaves the coupling order
        """
        spec = self.run.simulation
        levels = sorted(j_list or spec.j_list)
        cfg = spec.sim_config()
        base = order_up_to_policy(spec.base_s, spec.order_up_to)
        rows = []
        for j in levels:
            base_trace, truncated = simulate_coupled(
                self.model, self.h, self.c, base, j, cfg, spec.x0
            )
            gap, gap_ci = _paired_gap(base_trace, truncated)
            bound = truncation_gap_bound(self.model, self.c, j)
            row = {
                "j": j,
                "base_cost": base_trace.average_cost,
                "truncated_cost": truncated.average_cost,
                "gap": gap,
                "gap_ci": gap_ci,
                "bound": bound,
                "within_bound": bool(gap <= bound + 3.0 * gap_ci),
            }
            logger.info(
                f"j={j:g}: gap {gap:.6g} +/- {gap_ci:.3g}, bound {bound:.6g}"
            )
            rows.append(row)
        self.store.write_csv(
            COMPARE_FILE, COMPARE_HEADER, ([r[k] for k in COMPARE_HEADER] for r in rows)
        )
        return rows

    def report(self) -> str:
        """Write summary.md and the value-function plot from stored artifacts.

        Returns:
            Path of summary.md
        """
        optimum = self._optimum()
        certificate = self.store.read_optional_json(CERTIFICATE_FILE)
        if certificate is None:
            logger.info("No stored certificate, verifying first")
            try:
                certificate = self.verify().to_dict()
            except CertificateFailure:
                certificate = self.store.read_json(CERTIFICATE_FILE)
        return report.write_report(
            self.store,
            self.model,
            self.h,
            optimum,
            certificate,
            simulation=self.store.read_optional_json(SIMULATION_FILE),
        )


def _paired_gap(base: CostTrace, truncated: CostTrace) -> Tuple[float, float]:
    """Return the cost gap and its CI half-width from paired batch means."""
    _, _, half = batch_interval(truncated.batch_means - base.batch_means)
    return truncated.average_cost - base.average_cost, half


def _offending(certificate: ValueCertificate) -> List[float]:
    if certificate.residual_z is None or certificate.residual_values is None:
        return []
    tol = certificate.tolerance
    zs, res = certificate.residual_z, certificate.residual_values
    bad = (res < -tol) | ((zs > certificate.underline_s) & (np.abs(res) > tol))
    return [float(z) for z in zs[bad][:20]]
