import os
import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from dotenv import load_dotenv

from bayes_factors import DEFAULT_REL_TOL, MAX_REL_TOL, MIN_REL_TOL, GPriorSpec, Method, Variant
from errors import ConfigError, SubharmonicError
from regression import DEFAULT_MODEL_CAP

logger = logging.getLogger("Subharmonic.Config")

COMMANDS = ("select", "simulate", "sweep", "bench-laplace")
FORMATS = ("json", "csv", "pretty")
THREADS_ENV = "SUBHARMONIC_THREADS"
CONFIG_ENV = "SUBHARMONIC_CONFIG"

DEFAULT_CONFIG = {
    "rel_tol": DEFAULT_REL_TOL,
    "enumeration_cap": DEFAULT_MODEL_CAP,
    "log_file": "subharmonic.log",
    "log_level": "INFO",
    "top": 3,
    "format": "pretty",
    "seed": 20240601,
    # unset: 200 for simulate, 100 for sweep
    "replicates": None,
    "threads": None,
    "nu": [0.5],
    "k": 0.0,
    "variant": "centered",
    "methods": ["laplace-exact", "bic"],
    "prior": "uniform",
}


def load_config(path: Optional[str] = None) -> Dict:
    """Load configuration from config.json (or $SUBHARMONIC_CONFIG) over the defaults"""
    load_dotenv()
    config = dict(DEFAULT_CONFIG)
    path = path or os.environ.get(CONFIG_ENV, "config.json")

    try:
        if os.path.exists(path):
            with open(path, "r") as f:
                user_config = json.load(f)
            unknown = set(user_config) - set(DEFAULT_CONFIG)
            if unknown:
                logger.warning(f"Ignoring unknown configuration keys: {sorted(unknown)}")
            config.update({k: v for k, v in user_config.items() if k in DEFAULT_CONFIG})
        else:
            logger.debug(f"{path} not found. Using default configuration.")
    except Exception as e:
        logger.error(f"Error loading configuration from {path}: {e}")
    return config


def resolve_threads(config: Dict) -> int:
    """$SUBHARMONIC_THREADS, then the config value, then the CPU count"""
    raw = os.environ.get(THREADS_ENV) or config.get("threads")
    if raw in (None, ""):
        return max(1, os.cpu_count() or 1)
    try:
        threads = int(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{THREADS_ENV} must be an integer, got '{raw}'")
    if threads < 1:
        raise ConfigError(f"worker count must be at least 1, got {threads}")
    return threads


@dataclass
class RunConfig:
    command: str
    input: Optional[str] = None
    response: Optional[str] = None
    nu: List[float] = field(default_factory=lambda: [0.5])
    k: float = 0.0
    variant: Variant = Variant.CENTERED
    methods: List[Method] = field(default_factory=lambda: [Method.LAPLACE_EXACT, Method.BIC])
    prior: str = "uniform"
    min_size: int = 0
    seed: int = 20240601
    replicates: int = 200
    output: Optional[str] = None
    format: str = "pretty"
    rel_tol: float = DEFAULT_REL_TOL
    top: int = 3
    threads: int = 1
    cap: int = DEFAULT_MODEL_CAP
    # simulate / sweep
    design: str = "correlated16"
    fixed_predictors: bool = False
    n: int = 30
    p: int = 6
    q_true: List[int] = field(default_factory=lambda: [4])
    sigma: List[float] = field(default_factory=lambda: [1.0])
    errors: List[str] = field(default_factory=lambda: ["gaussian"])
    n_grid: List[int] = field(default_factory=lambda: [50, 200, 800, 3200])
    # bench-laplace
    q: int = 2
    r: float = 0.5

    def validate(self) -> None:
        """Reject bad values before any work starts."""
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command '{self.command}'", {"choices": list(COMMANDS)})
        if self.format not in FORMATS:
            raise ConfigError(f"unknown output format '{self.format}'", {"choices": list(FORMATS)})
        if not MIN_REL_TOL < self.rel_tol < MAX_REL_TOL:
            raise ConfigError(f"rel_tol must lie in ({MIN_REL_TOL}, {MAX_REL_TOL}), got {self.rel_tol}")
        if self.command == "select" and not self.input:
            raise ConfigError("select needs --input")
        if self.replicates < 1:
            raise ConfigError(f"replicates must be at least 1, got {self.replicates}")
        if not self.nu:
            raise ConfigError("at least one nu is required")

        smallest = self.min_size if self.min_size else (0 if self.prior == "uniform-all" else 1)
        if self.command == "bench-laplace":
            smallest = self.q
        for nu in self.nu:
            try:
                spec = GPriorSpec(nu=nu, k=self.k, variant=self.variant)
            except SubharmonicError as e:
                raise ConfigError(e.message, e.details)
            g_methods = [m for m in self.methods if m is not Method.BIC]
            # the phi form only needs nu < q; the integral itself also needs nu > -k
            integral_methods = [m for m in g_methods if m is not Method.LAPLACE_PHI]
            if integral_methods and not spec.admits(smallest):
                raise ConfigError(
                    f"nu={nu} with k={self.k} is invalid for models of size {smallest}: "
                    f"need {-self.k} < nu < {spec.effective_q(smallest)}",
                    {"nu": nu, "k": self.k, "min_size": smallest},
                )
            if g_methods and not nu < spec.effective_q(smallest):
                raise ConfigError(
                    f"nu={nu} must be below {spec.effective_q(smallest)} for models of size {smallest}",
                    {"nu": nu, "min_size": smallest},
                )
            if g_methods and not spec.is_distribution_robust:
                logger.warning(f"nu={nu}, k={self.k} is Gaussian-motivated, not distribution-robust (robust range: k=0, 0 < nu < 1)")
