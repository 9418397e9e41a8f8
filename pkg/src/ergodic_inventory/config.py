"""Configuration module.

This module loads the INI configuration file, applies command-line overrides
and builds the typed, validated ``RunConfig`` used by every command.
"""

import configparser
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

from ergodic_inventory.costs import HoldingCost, OrderingCost
from ergodic_inventory.errors import ConfigError, DomainError
from ergodic_inventory.families import build_holding, build_model, build_ordering
from ergodic_inventory.kernel import DemandModel
from ergodic_inventory.optimizer import OptimizerOptions
from ergodic_inventory.simulator import SimConfig
from ergodic_inventory.verifier import VerifierOptions

logger = logging.getLogger(__name__)

SIMULATION_POLICIES = ("ss", "optimal", "never", "reflected", "truncated")
# Sections that determine the optimum
SOLVE_SECTIONS = ("model", "holding", "ordering", "optimizer")


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        # a trailing comma keeps one-element lists as lists
        joined = ", ".join(_format(v) for v in value)
        return joined + "," if len(value) == 1 else joined
    return str(value)


def _parse_value(raw: str) -> Any:
    """Parse a parameter value: float, or a comma-separated list of floats."""
    if "," in raw:
        return [float(v) for v in raw.split(",") if v.strip()]
    return float(raw)


class Config:
    """Configuration handler backed by an INI file."""

    def __init__(self, config_path: Optional[str] = None):
        """Initialize the configuration handler.

        Args:
            config_path: Path to the configuration file; an empty in-memory
                configuration is created when omitted
        """
        self.config_path = config_path
        self.config = configparser.ConfigParser(interpolation=None)
        # keys are case-sensitive: simulation.s and simulation.S differ
        self.config.optionxform = str  # type: ignore[assignment,method-assign]
        self.loaded = self._load_config() if config_path else False

    def _load_config(self) -> bool:
        """Load the configuration file.

        Returns:
            True if successful, False otherwise
        """
        assert self.config_path is not None
        if not os.path.exists(self.config_path):
            logger.error(f"Configuration file not found: {self.config_path}")
            return False

        try:
            self.config.read(self.config_path)
            logger.debug(f"Loaded configuration from {self.config_path}")
            return True
        except configparser.Error as e:
            logger.error(f"Error parsing configuration file: {e}")
            return False

    def get(
        self, section: str, key: str, fallback: Optional[str] = None
    ) -> Optional[str]:
        """Get a raw string value.

        Returns:
            The value, or ``fallback`` when the section or key is missing
        """
        try:
            return self.config.get(section, key, fallback=fallback)
        except configparser.NoSectionError as e:
            logger.warning(f"Error getting {section}.{key} from config: {e}")
            return fallback

    def get_float(
        self, section: str, key: str, fallback: Optional[float]
    ) -> Optional[float]:
        """Get a float value.

        Raises:
            ConfigError: If the value is present but not a number
        """
        raw = self.get(section, key)
        if raw is None or raw.strip() == "":
            return fallback
        try:
            return float(raw)
        except ValueError as e:
            logger.error(f"Invalid number for {section}.{key}: {raw!r}")
            raise ConfigError(f"{section}.{key} must be a number, got {raw!r}") from e

    def get_int(self, section: str, key: str, fallback: int) -> int:
        """Get an integer value.

        Raises:
            ConfigError: If the value is present but not an integer
        """
        raw = self.get(section, key)
        if raw is None or raw.strip() == "":
            return fallback
        try:
            return int(raw)
        except ValueError as e:
            logger.error(f"Invalid integer for {section}.{key}: {raw!r}")
            raise ConfigError(f"{section}.{key} must be an integer, got {raw!r}") from e

    def get_bool(self, section: str, key: str, fallback: bool) -> bool:
        """Get a boolean value."""
        try:
            return self.config.getboolean(section, key, fallback=fallback)
        except (configparser.NoSectionError, ValueError) as e:
            logger.warning(f"Error getting {section}.{key} from config: {e}")
            return fallback

    def get_float_list(
        self, section: str, key: str, fallback: Sequence[float]
    ) -> List[float]:
        """Get a comma-separated list of floats."""
        raw = self.get(section, key)
        if raw is None or raw.strip() == "":
            return list(fallback)
        try:
            return [float(v) for v in raw.split(",") if v.strip()]
        except ValueError as e:
            raise ConfigError(f"{section}.{key} must be a list of numbers") from e

    def get_params(
        self, section: str, prefix: str = "", exclude: Sequence[str] = ()
    ) -> Dict[str, Any]:
        """Collect family parameters of a section.

        Args:
            section: Section name
            prefix: Only keys starting with this prefix, which is stripped
            exclude: Keys to skip

        Returns:
            Mapping of parameter name to float or list of floats
        """
        if not self.config.has_section(section):
            return {}
        params: Dict[str, Any] = {}
        for key, raw in self.config.items(section):
            if key in exclude or not key.startswith(prefix):
                continue
            try:
                params[key[len(prefix):]] = _parse_value(raw)
            except ValueError as e:
                raise ConfigError(
                    f"{section}.{key} must be numeric, got {raw!r}"
                ) from e
        return params

    def get_logging_level(self) -> str:
        """Get the logging level.

        Returns:
            Logging level (default: "INFO")
        """
        return (self.get("logging", "level", fallback="INFO") or "INFO").upper()

    def get_log_file(self) -> Optional[str]:
        """Get the log file path.

        Returns:
            Log file path or None if not configured
        """
        log_file = self.get("logging", "file", fallback=None)
        if log_file:
            log_file = os.path.expanduser(log_file)
            log_dir = os.path.dirname(log_file)
            if log_dir and not os.path.exists(log_dir):
                os.makedirs(log_dir, exist_ok=True)
        return log_file or None

    def get_max_log_size(self) -> int:
        """Get the maximum log file size in bytes.

        Returns:
            Maximum log file size in bytes (default: 1MB)
        """
        try:
            # Size in KB, convert to bytes
            return self.config.getint("logging", "max_log_size", fallback=1024) * 1024
        except (configparser.NoSectionError, ValueError) as e:
            logger.warning(f"Error getting max log size from config: {e}")
            return 1024 * 1024

    def get_log_backup_count(self) -> int:
        """Get the number of log backup files to keep.

        Returns:
            Number of log backup files (default: 3)
        """
        try:
            return self.config.getint("logging", "backup_count", fallback=3)
        except (configparser.NoSectionError, ValueError) as e:
            logger.warning(f"Error getting log backup count from config: {e}")
            return 3

    def apply_overrides(self, overrides: Sequence[str]) -> None:
        """Apply ``section.key=value`` overrides.

        Raises:
            ConfigError: If an override is malformed
        """
        for item in overrides:
            target, sep, value = item.partition("=")
            section, dot, key = target.strip().partition(".")
            if not sep or not dot or not section or not key:
                raise ConfigError(
                    f"Override must look like section.key=value: {item!r}"
                )
            if not self.config.has_section(section):
                self.config.add_section(section)
            self.config.set(section, key, value.strip())
            logger.debug(f"Override {section}.{key}={value.strip()}")

    def get_all_settings(self) -> Dict[str, Dict[str, str]]:
        """Get all configuration settings as a dictionary.

        Returns:
            Dictionary of all configuration settings
        """
        settings: Dict[str, Dict[str, str]] = {}
        for section in self.config.sections():
            settings[section] = {}
            for option in self.config.options(section):
                settings[section][option] = self.config.get(section, option)
        return settings

    def write(self, path: Optional[str] = None) -> str:
        """Write the configuration to ``path`` (default: its own path)."""
        target = path or self.config_path
        if not target:
            raise ConfigError("No path to write the configuration to")
        directory = os.path.dirname(target)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(target, "w") as config_file:
            self.config.write(config_file)
        return target

    def create_default_config(self) -> bool:
        """Create a default (baseline) configuration file.

        Returns:
            True if successful, False otherwise
        """
        try:
            self.config = RunConfig().to_config().config
            if self.config_path:
                self.config.set(
                    "logging",
                    "file",
                    os.path.join(
                        os.path.dirname(self.config_path), "ergodic-inventory.log"
                    ),
                )
            self.write()
            logger.info(f"Created default configuration at {self.config_path}")
            return True
        except (OSError, ConfigError) as e:
            logger.error(f"Error creating default configuration: {e}")
            return False


@dataclass
class ModelSpec:
    """Drift/volatility families with declared bounds."""

    drift: str = "constant"
    drift_params: Dict[str, Any] = field(default_factory=lambda: {"mu": 1.0})
    volatility: str = "constant"
    volatility_params: Dict[str, Any] = field(
        default_factory=lambda: {"sigma": math.sqrt(2.0)}
    )
    mu_lo: Optional[float] = None
    mu_hi: Optional[float] = None
    sigma_lo: Optional[float] = None
    sigma_hi: Optional[float] = None
    ref_point: float = 0.0

    def build(self) -> DemandModel:
        """Build the demand model."""
        return build_model(
            self.drift,
            self.drift_params,
            self.volatility,
            self.volatility_params,
            mu_lo=self.mu_lo,
            mu_hi=self.mu_hi,
            sigma_lo=self.sigma_lo,
            sigma_hi=self.sigma_hi,
            ref_point=self.ref_point,
        )


@dataclass
class CostSpec:
    """Family name plus parameter map."""

    family: str
    params: Dict[str, Any] = field(default_factory=dict)


@dataclass
class SimulationSpec:
    """Simulation settings and the policy to simulate."""

    dt: float = 1e-3
    horizon: float = 1000.0
    replications: int = 8
    seed: int = 20240601
    batch_count: int = 20
    record_every: int = 100
    x0: float = 0.0
    policy: str = "optimal"
    s: float = 0.0
    S: float = 2.0
    base_s: float = 0.0
    order_up_to: float = 100.0
    j: float = 10.0
    z_b: float = 0.0
    hist_bins: int = 400
    span: Optional[float] = None
    j_list: List[float] = field(default_factory=lambda: [10.0, 20.0, 40.0])

    def sim_config(self) -> SimConfig:
        """Build the simulator settings."""
        return SimConfig(
            dt=self.dt,
            horizon=self.horizon,
            replications=self.replications,
            seed=self.seed,
            batch_count=self.batch_count,
            record_every=self.record_every,
        )


@dataclass
class RunConfig:
    """Typed view of the configuration used by every command."""

    model: ModelSpec = field(default_factory=ModelSpec)
    holding: CostSpec = field(
        default_factory=lambda: CostSpec(
            "piecewise-linear", {"holding": 1.0, "shortage": 1.0}
        )
    )
    ordering: CostSpec = field(
        default_factory=lambda: CostSpec(
            "setup-plus-linear", {"setup": 1.0, "rate": 0.0}
        )
    )
    optimizer: OptimizerOptions = field(default_factory=OptimizerOptions)
    verifier: VerifierOptions = field(default_factory=VerifierOptions)
    dump_residuals: bool = False
    simulation: SimulationSpec = field(default_factory=SimulationSpec)
    output_dir: str = "results"
    log_level: str = "INFO"
    log_file: Optional[str] = None
    max_log_size: int = 1024
    backup_count: int = 3

    def build_model(self) -> DemandModel:
        """Build the demand model."""
        return self.model.build()

    def build_holding(self) -> HoldingCost:
        """Build the holding cost."""
        return build_holding(self.holding.family, self.holding.params)

    def build_ordering(self) -> OrderingCost:
        """Build the ordering cost."""
        return build_ordering(self.ordering.family, self.ordering.params)

    def fingerprint(self, sections: Sequence[str] = SOLVE_SECTIONS) -> str:
        """Return the SHA-256 digest of the settings in ``sections``."""
        settings = self.to_config().get_all_settings()
        chosen = {name: settings.get(name, {}) for name in sections}
        payload = json.dumps(chosen, sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def validate(self) -> None:
        """Check families and numeric ranges.

        Raises:
            ConfigError: On the first invalid setting
        """
        self.build_model()
        self.build_holding()
        self.build_ordering()

        opt = self.optimizer
        checks: List[Tuple[bool, str]] = [
            (opt.pitch_tol > 0, "optimizer.pitch_tol must be positive"),
            (opt.coarse_points >= 5, "optimizer.coarse_points must be >= 5"),
            (opt.refine_points >= 5, "optimizer.refine_points must be >= 5"),
            (opt.b1_initial > 0, "optimizer.b1_initial must be positive"),
            (opt.b1_cap >= opt.b1_initial, "optimizer.b1_cap must be >= b1_initial"),
            (opt.b2_cap > 0, "optimizer.b2_cap must be positive"),
            (self.verifier.cert_tol >= 0, "verifier.cert_tol must be nonnegative"),
            (self.verifier.z_points >= 11, "verifier.z_points must be >= 11"),
            (self.verifier.pair_points >= 11, "verifier.pair_points must be >= 11"),
            (self.verifier.span_factor > 0, "verifier.span_factor must be positive"),
        ]
        sim = self.simulation
        checks.extend(
            [
                (sim.policy in SIMULATION_POLICIES,
                 f"simulation.policy must be one of {SIMULATION_POLICIES}"),
                (sim.s < sim.S, "simulation.s must be below simulation.S"),
                (sim.base_s < sim.order_up_to,
                 "simulation.base_s must be below simulation.order_up_to"),
                (sim.j > 0, "simulation.j must be positive"),
                (all(j > 0 for j in sim.j_list), "simulation.j_list must be positive"),
                (sim.hist_bins >= 1, "simulation.hist_bins must be >= 1"),
                (sim.policy != "reflected" or sim.x0 >= sim.z_b,
                 "simulation.x0 must be at or above z_b for reflected runs"),
            ]
        )
        for ok, message in checks:
            if not ok:
                logger.error(f"Invalid configuration: {message}")
                raise ConfigError(message)
        try:
            sim.sim_config()
        except DomainError as e:
            raise ConfigError(f"simulation: {e}") from e

    @classmethod
    def from_config(cls, config: Config) -> "RunConfig":
        """Build and validate the typed configuration.

        Raises:
            ConfigError: If a value is malformed or invalid
        """
        d = cls()
        model = ModelSpec(
            drift=config.get("model", "drift", fallback=d.model.drift) or d.model.drift,
            drift_params=config.get_params("model", prefix="drift_")
            or dict(d.model.drift_params),
            volatility=config.get("model", "volatility", fallback=d.model.volatility)
            or d.model.volatility,
            volatility_params=config.get_params("model", prefix="volatility_")
            or dict(d.model.volatility_params),
            mu_lo=config.get_float("model", "mu_lo", None),
            mu_hi=config.get_float("model", "mu_hi", None),
            sigma_lo=config.get_float("model", "sigma_lo", None),
            sigma_hi=config.get_float("model", "sigma_hi", None),
            ref_point=config.get_float("model", "ref_point", 0.0) or 0.0,
        )
        holding = CostSpec(
            family=config.get("holding", "family", fallback=d.holding.family)
            or d.holding.family,
            params=config.get_params("holding", exclude=("family",))
            or dict(d.holding.params),
        )
        ordering = CostSpec(
            family=config.get("ordering", "family", fallback=d.ordering.family)
            or d.ordering.family,
            params=config.get_params("ordering", exclude=("family",))
            or dict(d.ordering.params),
        )
        o = d.optimizer
        optimizer = OptimizerOptions(
            pitch_tol=config.get_float("optimizer", "pitch_tol", o.pitch_tol),
            coarse_points=config.get_int("optimizer", "coarse_points", o.coarse_points),
            refine_points=config.get_int("optimizer", "refine_points", o.refine_points),
            b1_initial=config.get_float("optimizer", "b1_initial", o.b1_initial),
            b1_cap=config.get_float("optimizer", "b1_cap", o.b1_cap),
            b2_cap=config.get_float("optimizer", "b2_cap", o.b2_cap),
        )
        v = d.verifier
        verifier = VerifierOptions(
            cert_tol=config.get_float("verifier", "cert_tol", v.cert_tol),
            z_points=config.get_int("verifier", "z_points", v.z_points),
            pair_points=config.get_int("verifier", "pair_points", v.pair_points),
            span_factor=config.get_float("verifier", "span_factor", v.span_factor),
            alpha_perturbation=config.get_float(
                "verifier", "alpha_perturbation", v.alpha_perturbation
            ),
        )
        s = d.simulation
        simulation = SimulationSpec(
            dt=config.get_float("simulation", "dt", s.dt),
            horizon=config.get_float("simulation", "horizon", s.horizon),
            replications=config.get_int("simulation", "replications", s.replications),
            seed=config.get_int("simulation", "seed", s.seed),
            batch_count=config.get_int("simulation", "batch_count", s.batch_count),
            record_every=config.get_int("simulation", "record_every", s.record_every),
            x0=config.get_float("simulation", "x0", s.x0),
            policy=config.get("simulation", "policy", fallback=s.policy) or s.policy,
            s=config.get_float("simulation", "s", s.s),
            S=config.get_float("simulation", "S", s.S),
            base_s=config.get_float("simulation", "base_s", s.base_s),
            order_up_to=config.get_float("simulation", "order_up_to", s.order_up_to),
            j=config.get_float("simulation", "j", s.j),
            z_b=config.get_float("simulation", "z_b", s.z_b),
            hist_bins=config.get_int("simulation", "hist_bins", s.hist_bins),
            span=config.get_float("simulation", "span", None),
            j_list=config.get_float_list("simulation", "j_list", s.j_list),
        )
        run = cls(
            model=model,
            holding=holding,
            ordering=ordering,
            optimizer=optimizer,
            verifier=verifier,
            dump_residuals=config.get_bool("verifier", "dump_residuals", False),
            simulation=simulation,
            output_dir=config.get("output", "directory", fallback=d.output_dir)
            or d.output_dir,
            log_level=config.get_logging_level(),
            log_file=config.get("logging", "file", fallback=None) or None,
            max_log_size=config.get_max_log_size() // 1024,
            backup_count=config.get_log_backup_count(),
        )
        run.validate()
        return run

    def to_config(self, path: Optional[str] = None) -> Config:
        """Serialise back to an INI configuration."""
        out = Config()
        out.config_path = path
        cp = out.config

        model: Dict[str, Any] = {
            "drift": self.model.drift,
            "volatility": self.model.volatility,
        }
        model.update({f"drift_{k}": v for k, v in self.model.drift_params.items()})
        model.update(
            {f"volatility_{k}": v for k, v in self.model.volatility_params.items()}
        )
        for key in ("mu_lo", "mu_hi", "sigma_lo", "sigma_hi"):
            value = getattr(self.model, key)
            if value is not None:
                model[key] = value
        model["ref_point"] = self.model.ref_point
        cp["model"] = {k: _format(v) for k, v in model.items()}

        cp["holding"] = {
            "family": self.holding.family,
            **{k: _format(v) for k, v in self.holding.params.items()},
        }
        cp["ordering"] = {
            "family": self.ordering.family,
            **{k: _format(v) for k, v in self.ordering.params.items()},
        }
        o = self.optimizer
        cp["optimizer"] = {
            "pitch_tol": _format(o.pitch_tol),
            "coarse_points": _format(o.coarse_points),
            "refine_points": _format(o.refine_points),
            "b1_initial": _format(o.b1_initial),
            "b1_cap": _format(o.b1_cap),
            "b2_cap": _format(o.b2_cap),
        }
        v = self.verifier
        cp["verifier"] = {
            "cert_tol": _format(v.cert_tol),
            "z_points": _format(v.z_points),
            "pair_points": _format(v.pair_points),
            "span_factor": _format(v.span_factor),
            "alpha_perturbation": _format(v.alpha_perturbation),
            "dump_residuals": _format(self.dump_residuals),
        }
        s = self.simulation
        simulation = {
            "dt": s.dt,
            "horizon": s.horizon,
            "replications": s.replications,
            "seed": s.seed,
            "batch_count": s.batch_count,
            "record_every": s.record_every,
            "x0": s.x0,
            "policy": s.policy,
            "s": s.s,
            "S": s.S,
            "base_s": s.base_s,
            "order_up_to": s.order_up_to,
            "j": s.j,
            "z_b": s.z_b,
            "hist_bins": s.hist_bins,
            "j_list": s.j_list,
        }
        if s.span is not None:
            simulation["span"] = s.span
        cp["simulation"] = {k: _format(val) for k, val in simulation.items()}
        cp["output"] = {"directory": self.output_dir}
        cp["logging"] = {
            "level": self.log_level,
            "max_log_size": _format(self.max_log_size),
            "backup_count": _format(self.backup_count),
        }
        if self.log_file:
            cp["logging"]["file"] = self.log_file
        return out


def load_run_config(
    config_path: Optional[str], overrides: Sequence[str] = ()
) -> RunConfig:
    """Load a configuration file, apply overrides and validate.

    A missing path yields the baseline configuration with overrides applied.

    Raises:
        ConfigError: If the file cannot be read or the result is invalid
    """
    if config_path:
        config = Config(config_path)
        if not config.loaded:
            raise ConfigError(f"Could not load configuration from {config_path}")
    else:
        config = RunConfig().to_config()
    config.apply_overrides(overrides)
    return RunConfig.from_config(config)
