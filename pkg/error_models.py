import logging
import math
import re
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammaln

from errors import DomainError, MomentDiverges, RootMismatch, UnsupportedFamily

logger = logging.getLogger("Subharmonic.ErrorModels")

ROOT_MISMATCH_TOLERANCE = 1e-8


class Family(Enum):
    GAUSSIAN = "gaussian"
    STUDENT_T = "student-t"
    SCALE_MIXTURE = "scale-mixture"


@dataclass(frozen=True)
class ErrorModel:
    """Spherically symmetric error law.

    The base law has unit component variance; ``scale`` multiplies every
    draw, so the component variance is ``scale ** 2``.
    A scale mixture is eps = sqrt(V) z with z standard Gaussian and E[V] = 1.
    ``log_mixing_moment(nu)`` must return log E[V^(nu/2)];
    ``log_density(t, n)`` is the log density generator f(t) at t = |eps|^2;
    ``mixing_sampler(rng)`` draws one V.
    """

    family: Family
    df: Optional[float] = None
    log_mixing_moment: Optional[Callable[[float], float]] = None
    log_density: Optional[Callable[[float, int], float]] = None
    mixing_sampler: Optional[Callable[[np.random.Generator], float]] = None
    name: str = ""
    scale: float = 1.0

    def __post_init__(self):
        if self.family is Family.STUDENT_T and not (self.df is not None and self.df > 2.0):
            raise DomainError(f"Student-t errors need df > 2 for a finite variance, got {self.df}")
        if self.family is Family.SCALE_MIXTURE and self.log_mixing_moment is None:
            raise DomainError("a scale mixture needs a moment oracle")
        if not (math.isfinite(self.scale) and self.scale > 0.0):
            raise DomainError(f"error scale must be positive, got {self.scale}")

    @classmethod
    def gaussian(cls) -> "ErrorModel":
        return cls(Family.GAUSSIAN, name="gaussian")

    @classmethod
    def student_t(cls, df: float) -> "ErrorModel":
        if math.isinf(df):
            return cls.gaussian()
        return cls(Family.STUDENT_T, df=float(df), name=f"t{df:g}")

    @classmethod
    def multivariate_t(cls, df: float) -> "ErrorModel":
        """Multi-t(0, I; df): identity shape matrix, component variance df / (df - 2)."""
        if math.isinf(df):
            return cls.gaussian()
        unit = cls.student_t(df)
        return cls(Family.STUDENT_T, df=unit.df, name=f"multi-t{df:g}", scale=math.sqrt(df / (df - 2.0)))

    @classmethod
    def scale_mixture(
        cls,
        log_mixing_moment: Callable[[float], float],
        log_density: Optional[Callable[[float, int], float]] = None,
        mixing_sampler: Optional[Callable[[np.random.Generator], float]] = None,
        name: str = "scale-mixture",
    ) -> "ErrorModel":
        return cls(
            Family.SCALE_MIXTURE,
            log_mixing_moment=log_mixing_moment,
            log_density=log_density,
            mixing_sampler=mixing_sampler,
            name=name,
        )

    @classmethod
    def parse(cls, text: str) -> "ErrorModel":
        """'gaussian' / 'normal', 't<df>' (unit variance) or 'multi-t<df>' (identity shape)."""
        key = text.strip().lower()
        if key in ("gaussian", "normal", "n"):
            return cls.gaussian()
        match = re.fullmatch(r"(t|student-t|multi-t)\(?([0-9.]+|inf)\)?", key)
        if match:
            df = float(match.group(2))
            return cls.multivariate_t(df) if match.group(1) == "multi-t" else cls.student_t(df)
        raise DomainError(f"unknown error family '{text}'", {"choices": ["gaussian", "t<df>", "multi-t<df>"]})

    def __str__(self) -> str:
        return self.name or self.family.value


def _log_gaussian_norm_moment(n: int, nu: float) -> float:
    return 0.5 * nu * math.log(2.0) + gammaln(0.5 * (n + nu)) - gammaln(0.5 * n)


def _log_unit_norm_moment(model: ErrorModel, n: int, nu: float) -> float:
    if nu == 2.0:
        # unit component variance: E|eps|^2 = n for every family
        return math.log(n)

    if model.family is Family.GAUSSIAN:
        return float(_log_gaussian_norm_moment(n, nu))

    if model.family is Family.STUDENT_T:
        df = model.df
        if nu >= df:
            raise MomentDiverges(f"t({df:g}) errors have no moment of order {nu}", {"nu": nu, "df": df})
        return float(
            gammaln(0.5 * (n + nu)) - gammaln(0.5 * n)
            + gammaln(0.5 * (df - nu)) - gammaln(0.5 * df)
            + 0.5 * nu * math.log(df - 2.0)
        )

    mixing = float(model.log_mixing_moment(nu))
    if not math.isfinite(mixing):
        raise MomentDiverges(f"mixing variable of {model} has no moment of order {nu / 2}", {"nu": nu})
    return float(_log_gaussian_norm_moment(n, nu)) + mixing


def log_norm_moment(model: ErrorModel, n: int, nu: float) -> float:
    """log E|eps|^nu for an n-dimensional error vector."""
    if nu <= -n:
        raise MomentDiverges(f"E|eps|^nu is infinite for nu <= -n (nu={nu}, n={n})", {"nu": nu, "n": n})
    if nu == 0.0:
        return 0.0
    moment = _log_unit_norm_moment(model, n, nu)
    if model.scale != 1.0:
        moment += nu * math.log(model.scale)
    return moment


def bf_moment_correction(err_g: ErrorModel, err_f: ErrorModel, n: int, nu: float) -> float:
    """log E|eps_g|^nu - log E|eps_F|^nu, zero when both families agree."""
    if err_g == err_f:
        return 0.0
    return log_norm_moment(err_g, n, nu) - log_norm_moment(err_f, n, nu)


def _log_unit_density(model: ErrorModel, t: float, n: int) -> float:
    if model.family is Family.GAUSSIAN:
        return -0.5 * n * math.log(2.0 * math.pi) - 0.5 * t
    if model.family is Family.STUDENT_T:
        df = model.df
        return float(
            gammaln(0.5 * (n + df)) - gammaln(0.5 * df)
            - 0.5 * n * math.log(math.pi * (df - 2.0))
            - 0.5 * (n + df) * math.log1p(t / (df - 2.0))
        )
    if model.log_density is None:
        raise UnsupportedFamily(f"{model} has no density oracle")
    return float(model.log_density(t, n))


def log_density_generator(model: ErrorModel, t: float, n: int) -> float:
    """log f(t) with f the normalized density generator at t = |eps|^2."""
    if model.scale == 1.0:
        return _log_unit_density(model, t, n)
    s2 = model.scale ** 2
    return -0.5 * n * math.log(s2) + _log_unit_density(model, t / s2, n)


def _dlog_unit_density(model: ErrorModel, c: float, n: int) -> float:
    if model.family is Family.GAUSSIAN:
        return -0.5
    if model.family is Family.STUDENT_T:
        return -0.5 * (n + model.df) / (model.df - 2.0 + c)
    step = 1e-6 * c
    return (_log_unit_density(model, c + step, n) - _log_unit_density(model, c - step, n)) / (2.0 * step)


def _dlog_density(model: ErrorModel, c: float, n: int) -> float:
    s2 = model.scale ** 2
    return _dlog_unit_density(model, c / s2, n) / s2


def _closed_form_root(model: ErrorModel, n: int) -> Optional[float]:
    if model.family is Family.GAUSSIAN:
        return float(n) * model.scale ** 2
    if model.family is Family.STUDENT_T:
        return n * (model.df - 2.0) / model.df * model.scale ** 2
    return None


def bic_scale_root(model: ErrorModel, n: int) -> float:
    """Solve n/2 + c f'(c)/f(c) = 0; closed forms are checked against brentq on (0, 10 n s^2]."""
    if model.family is Family.SCALE_MIXTURE and model.log_density is None:
        raise UnsupportedFamily(f"{model} has no density oracle, the BIC scale root is undefined")

    def condition(c: float) -> float:
        return 0.5 * n + c * _dlog_density(model, c, n)

    lo, hi = 1e-12 * n, 10.0 * n * max(1.0, model.scale ** 2)
    if condition(lo) * condition(hi) > 0.0:
        raise UnsupportedFamily(f"no sign change of the scale equation on (0, {hi:g}] for {model}")
    root = brentq(condition, lo, hi, xtol=1e-300, rtol=1e-14, maxiter=500)

    closed = _closed_form_root(model, n)
    if closed is None:
        return float(root)
    if abs(root - closed) > ROOT_MISMATCH_TOLERANCE * closed:
        raise RootMismatch(
            f"closed-form scale root {closed} disagrees with numerical root {root} for {model}",
            {"closed_form": closed, "numerical": root},
        )
    return float(closed)


def _log_bic_level(model: ErrorModel, n: int) -> float:
    c = bic_scale_root(model, n)
    return -0.5 * n * math.log(c) + log_density_generator(model, c, n)


def log_bic_correction(err_g: ErrorModel, err_f: ErrorModel, n: int) -> float:
    """log[c_g^(-n/2) f_g(c_g)] - log[c_F^(-n/2) f_F(c_F)]."""
    if err_g == err_f:
        return 0.0
    return _log_bic_level(err_g, n) - _log_bic_level(err_f, n)


def _sample_unit_errors(model: ErrorModel, n: int, rng: np.random.Generator, size: Optional[int]) -> np.ndarray:
    shape = (n,) if size is None else (size, n)
    z = rng.standard_normal(shape)
    if model.family is Family.GAUSSIAN:
        return z
    if model.family is Family.STUDENT_T:
        w = rng.chisquare(model.df, size=None if size is None else (size, 1))
        return z * np.sqrt((model.df - 2.0) / w)
    if model.mixing_sampler is None:
        raise UnsupportedFamily(f"{model} has no mixing sampler")
    if size is None:
        return z * math.sqrt(model.mixing_sampler(rng))
    v = np.array([model.mixing_sampler(rng) for _ in range(size)])
    return z * np.sqrt(v)[:, None]


def sample_errors(model: ErrorModel, n: int, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    """Draw spherical error vectors: one mixing draw per vector, not per component."""
    eps = _sample_unit_errors(model, n, rng, size)
    return eps if model.scale == 1.0 else model.scale * eps
