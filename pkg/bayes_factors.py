"""Bayes factors for mixtures of g-priors against the full model.

Every integral is handled on the log scale through the substitution
tau = log g.  The log-integrand is

    h(tau) = (nu/2) tau - (k/2) log(1 + e^-tau)
             + ((n - q - 1)/2) log(1 + e^tau) - E log(1 + r e^tau)

with E = (n-1)/2 for the centered variant (r = 1 - R^2) and E = n/2 for the
check variant (r = 1 - check R^2).  Writing m = 2E and q_eff = m - (n - q - 1)
(q for centered, q + 1 for check) the integral is finite iff -k < nu < q_eff.
"""

import logging
import math
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import IntegrationWarning, quad
from scipy.special import expit

from errors import (
    DivergentIntegral,
    DomainError,
    NonConvergent,
    NullModelForbidden,
    PerfectFit,
)
from regression import FitSummary, FitTable

logger = logging.getLogger("Subharmonic.BayesFactors")

DEFAULT_REL_TOL = 1e-10
MIN_REL_TOL = 1e-14
MAX_REL_TOL = 1e-4
MAX_WINDOW_DOUBLINGS = 24
LOG_2PI = math.log(2.0 * math.pi)


class Variant(Enum):
    CENTERED = "centered"
    CHECK = "check"


class Method(Enum):
    EXACT = "exact"
    LAPLACE_PHI = "laplace"
    LAPLACE_EXACT = "laplace-exact"
    BIC = "bic"

    @classmethod
    def parse(cls, text: str) -> "Method":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise DomainError(f"unknown method '{text}'", {"choices": [m.value for m in cls]})


@dataclass(frozen=True)
class GPriorSpec:
    """Hyper-parameters of the prior g^(nu/2-1) (1 + 1/g)^(-k/2) on g."""

    nu: float
    k: float = 0.0
    variant: Variant = Variant.CENTERED

    def __post_init__(self):
        if not math.isfinite(self.nu):
            raise DomainError(f"nu must be finite, got {self.nu}")
        if not (math.isfinite(self.k) and self.k >= 0.0):
            raise DomainError(f"k must be >= 0, got {self.k}", {"k": self.k})
        if not isinstance(self.variant, Variant):
            object.__setattr__(self, "variant", Variant(self.variant))

    @classmethod
    def subharmonic(cls, nu: float = 0.5, variant: Variant = Variant.CENTERED) -> "GPriorSpec":
        return cls(nu=nu, k=0.0, variant=variant)

    @classmethod
    def guo_speckman(cls, variant: Variant = Variant.CENTERED) -> "GPriorSpec":
        return cls(nu=0.0, k=2.0, variant=variant)

    @classmethod
    def liang(cls, nu: float = -1.0, variant: Variant = Variant.CENTERED) -> "GPriorSpec":
        if not -2.0 < nu < 0.0:
            raise DomainError(f"the hyper-g family needs -2 < nu < 0, got {nu}")
        return cls(nu=nu, k=2.0 - nu, variant=variant)

    @classmethod
    def harmonic(cls, variant: Variant = Variant.CENTERED) -> "GPriorSpec":
        return cls(nu=2.0, k=0.0, variant=variant)

    @property
    def is_distribution_robust(self) -> bool:
        # The limit is free of the error law only for the sub-harmonic range
        return self.k == 0.0 and 0.0 < self.nu < 1.0

    def effective_q(self, q: int) -> int:
        return q + 1 if self.variant is Variant.CHECK else q

    def outer_exponent_half(self, n: int) -> float:
        return n / 2.0 if self.variant is Variant.CHECK else (n - 1) / 2.0

    def admits(self, q: int) -> bool:
        return -self.k < self.nu < self.effective_q(q)

    def check_model(self, q: int) -> None:
        if not self.admits(q):
            raise DivergentIntegral(
                f"nu={self.nu}, k={self.k} needs -k < nu < {self.effective_q(q)} for a model of size {q}",
                {"nu": self.nu, "k": self.k, "q": q, "variant": self.variant.value},
            )

    def r_of(self, fit: FitSummary) -> float:
        return 1.0 - (fit.r2_check if self.variant is Variant.CHECK else fit.r2)

    def integral_spec(self, n: int, q: int, r: float) -> "IntegralSpec":
        return IntegralSpec(n=n, q=q, r=r, nu=self.nu, k=self.k, outer_exponent_half=self.outer_exponent_half(n))


@dataclass(frozen=True)
class IntegralSpec:
    n: int
    q: int
    r: float
    nu: float
    k: float
    outer_exponent_half: float

    @property
    def m(self) -> float:
        return 2.0 * self.outer_exponent_half

    @property
    def q_eff(self) -> float:
        return self.m - (self.n - self.q - 1)

    @property
    def s(self) -> float:
        return self.q_eff - self.nu

    def validate(self) -> None:
        if self.nu >= self.q_eff or self.nu <= -self.k:
            raise DivergentIntegral(
                f"integral diverges: need {-self.k} < nu < {self.q_eff}, got nu={self.nu}",
                {"nu": self.nu, "k": self.k, "q": self.q},
            )
        if not 0.0 < self.r <= 1.0:
            raise DomainError(f"r must lie in (0, 1], got {self.r}", {"r": self.r})


@dataclass(frozen=True)
class LogBayesFactor:
    value: float
    method: Method


# Log-integrand and its derivatives.  All of these accept numpy arrays.

def _log_h(tau, nu, k, m, q_eff, log_r):
    return (
        0.5 * nu * tau
        - 0.5 * k * np.logaddexp(0.0, -tau)
        + 0.5 * (m - q_eff) * np.logaddexp(0.0, tau)
        - 0.5 * m * np.logaddexp(0.0, tau + log_r)
    )


def _dlog_h(tau, nu, k, m, q_eff, log_r):
    return (
        0.5 * nu
        + 0.5 * k * expit(-tau)
        + 0.5 * (m - q_eff) * expit(tau)
        - 0.5 * m * expit(tau + log_r)
    )


def _d2log_h(tau, nu, k, m, q_eff, log_r):
    # d/dtau expit(tau) = expit(tau) expit(-tau)
    g1 = expit(tau) * expit(-tau)
    gr = expit(tau + log_r) * expit(-tau - log_r)
    return 0.5 * (m - q_eff - k) * g1 - 0.5 * m * gr


def _mode_z(nu, k, m, q_eff, r):
    """Positive root of (q-nu) r z^2 + [(q-nu) - m(1-r) - (nu+k) r] z - (nu+k) = 0."""
    s = q_eff - nu
    a = s * r
    b = s - m * (1.0 - r) - (nu + k) * r
    c = -(nu + k)
    disc = np.sqrt(b * b - 4.0 * a * c)
    # pick the cancellation-free branch
    safe_b = np.where(b < 0.0, b, -1.0)
    safe_den = np.where(b >= 0.0, b + disc, 1.0)
    return np.where(b < 0.0, (disc - safe_b) / (2.0 * a), -2.0 * c / safe_den)


def _spec_args(spec: IntegralSpec):
    return spec.nu, spec.k, spec.m, spec.q_eff, math.log(spec.r)


def log_h(tau, spec: IntegralSpec):
    return _log_h(tau, *_spec_args(spec))


def dlog_h(tau, spec: IntegralSpec):
    return _dlog_h(tau, *_spec_args(spec))


def d2log_h(tau, spec: IntegralSpec):
    return _d2log_h(tau, *_spec_args(spec))


def _checked_for_laplace(spec: IntegralSpec) -> None:
    try:
        spec.validate()
    except DivergentIntegral as e:
        raise DomainError(e.message, e.details)
    if not spec.r < 1.0:
        raise DomainError(f"Laplace expansion needs 0 < r < 1, got {spec.r}", {"r": spec.r})


def laplace_mode(spec: IntegralSpec):
    """Return (z_hat, h at the mode, d2h/dtau2 at the mode)."""
    _checked_for_laplace(spec)
    z_hat = float(_mode_z(spec.nu, spec.k, spec.m, spec.q_eff, spec.r))
    tau_hat = math.log(z_hat)
    return z_hat, float(log_h(tau_hat, spec)), float(d2log_h(tau_hat, spec))


def log_integral_laplace_exact(spec: IntegralSpec) -> float:
    """Fully exponential Laplace value at the exact mode and exact curvature."""
    _, h_hat, curvature = laplace_mode(spec)
    return 0.5 * LOG_2PI + h_hat - 0.5 * math.log(-curvature)


def log_phi(s, r):
    """log of r s^(s-1) {(1/r - 1) e}^(-s); vectorised, no domain checks."""
    s = np.asarray(s, dtype=float)
    r = np.asarray(r, dtype=float)
    return np.log(r) + (s - 1.0) * np.log(s) - s * (np.log1p(-r) - np.log(r) + 1.0)


def phi(s: float, r: float) -> float:
    if not (s > 0.0 and 0.0 < r < 1.0):
        raise DomainError(f"phi needs s > 0 and 0 < r < 1, got s={s}, r={r}", {"s": s, "r": r})
    return math.exp(float(log_phi(s, r)))


def log_integral_phi(spec: IntegralSpec) -> float:
    """Large-n closed form 0.5 log(4 pi phi(q-nu, r) / (n^(q-nu) r^n))."""
    _checked_for_laplace(spec)
    n_eff = spec.m + 1.0
    s = spec.s
    return 0.5 * (math.log(4.0 * math.pi) + float(log_phi(s, spec.r)) - s * math.log(n_eff) - n_eff * math.log(spec.r))


def log_integral_J(spec: IntegralSpec, rel_tol: float = DEFAULT_REL_TOL) -> float:
    """log of the g-integral by adaptive Gauss-Kronrod quadrature in tau.

    The window is centered on the mode and doubled until the two outermost
    panels add less than rel_tol of the running total.
    """
    spec.validate()
    if not MIN_REL_TOL < rel_tol < MAX_REL_TOL:
        raise DomainError(f"rel_tol must lie in ({MIN_REL_TOL}, {MAX_REL_TOL}), got {rel_tol}")

    args = _spec_args(spec)
    tau_hat = math.log(float(_mode_z(spec.nu, spec.k, spec.m, spec.q_eff, spec.r)))
    h_hat = float(_log_h(tau_hat, *args))
    curvature = float(_d2log_h(tau_hat, *args))
    sigma = 1.0 / math.sqrt(-curvature) if curvature < 0.0 else 1.0

    def integrand(tau):
        return math.exp(float(_log_h(tau, *args)) - h_hat)

    epsrel = max(0.1 * rel_tol, 5e-14)

    def panel(a, b, epsabs=0.0):
        with warnings.catch_warnings():
            warnings.simplefilter("error", IntegrationWarning)
            try:
                value, _ = quad(integrand, a, b, epsabs=epsabs, epsrel=epsrel, limit=200)
            except IntegrationWarning as e:
                raise NonConvergent(f"quadrature did not converge on [{a:.3g}, {b:.3g}]: {e}", spec.__dict__)
        return value

    width = max(10.0 * sigma, 5.0)
    total = panel(tau_hat - width, tau_hat + width)
    for _ in range(MAX_WINDOW_DOUBLINGS):
        # tails only need to be resolved relative to the running total
        floor = epsrel * total
        tails = panel(tau_hat - 2.0 * width, tau_hat - width, floor) + panel(tau_hat + width, tau_hat + 2.0 * width, floor)
        total += tails
        width *= 2.0
        if tails < rel_tol * total:
            logger.debug(f"log J converged with half-width {width:.4g} for {spec}")
            return h_hat + math.log(total)
    raise NonConvergent(f"tail mass still above {rel_tol} after {MAX_WINDOW_DOUBLINGS} window doublings", spec.__dict__)


def _log_bic_term(r_g, r_f, q_g, p, n_eff):
    # 0.5 [ -n log r_g - q_g log n + n log r_f + p log n ]
    return 0.5 * (-n_eff * np.log(r_g) + n_eff * np.log(r_f) + (p - q_g) * math.log(n_eff))


def log_bf_bic(fit_g: FitSummary, fit_f: FitSummary, n: int, p: int) -> LogBayesFactor:
    """BIC-based Bayes factor of fit_g against the full model; the null model is allowed."""
    if fit_g.r2 >= 1.0 or fit_f.r2 >= 1.0:
        raise PerfectFit("BIC factor is undefined for a perfect fit (R^2 = 1)", {"model": fit_g.model.members})
    value = float(_log_bic_term(1.0 - fit_g.r2, 1.0 - fit_f.r2, fit_g.q, p, n))
    return LogBayesFactor(value, Method.BIC)


def _r_pair(fit_g: FitSummary, fit_f: FitSummary, spec: GPriorSpec):
    if spec.variant is Variant.CENTERED and (fit_g.q == 0 or fit_g.r2 <= 0.0):
        raise NullModelForbidden(
            "the centered variant is undefined at the null model; use the check variant",
            {"model": fit_g.model.members},
        )
    r_g, r_f = spec.r_of(fit_g), spec.r_of(fit_f)
    if r_g <= 0.0 or r_f <= 0.0:
        raise PerfectFit("Bayes factor is undefined for a perfect fit", {"model": fit_g.model.members})
    return r_g, r_f


def log_bf_exact(
    fit_g: FitSummary,
    fit_f: FitSummary,
    n: int,
    spec: GPriorSpec,
    rel_tol: float = DEFAULT_REL_TOL,
) -> LogBayesFactor:
    r_g, r_f = _r_pair(fit_g, fit_f, spec)
    log_j_g = log_integral_J(spec.integral_spec(n, fit_g.q, r_g), rel_tol)
    log_j_f = log_integral_J(spec.integral_spec(n, fit_f.q, r_f), rel_tol)
    return LogBayesFactor(log_j_g - log_j_f, Method.EXACT)


def log_bf_laplace_exact(fit_g: FitSummary, fit_f: FitSummary, n: int, spec: GPriorSpec) -> LogBayesFactor:
    r_g, r_f = _r_pair(fit_g, fit_f, spec)
    value = log_integral_laplace_exact(spec.integral_spec(n, fit_g.q, r_g)) - log_integral_laplace_exact(
        spec.integral_spec(n, fit_f.q, r_f)
    )
    return LogBayesFactor(value, Method.LAPLACE_EXACT)


def log_bf_laplace(
    fit_g: FitSummary,
    fit_f: FitSummary,
    n: int,
    p: int,
    nu: float,
    variant: Variant = Variant.CENTERED,
) -> LogBayesFactor:
    """BIC factor with the O(1) phi correction."""
    if variant is Variant.CHECK:
        r_g, r_f = 1.0 - fit_g.r2_check, 1.0 - fit_f.r2_check
        q_g, p_eff, n_eff = fit_g.q + 1, p + 1, n + 1
    else:
        r_g, r_f = 1.0 - fit_g.r2, 1.0 - fit_f.r2
        q_g, p_eff, n_eff = fit_g.q, p, n
    if not (0.0 < r_g < 1.0 and 0.0 < r_f < 1.0):
        raise DomainError(
            f"Laplace factor needs 0 < R^2 < 1, got r={r_g} for {fit_g.model} and r={r_f} for the full model",
            {"model": fit_g.model.members},
        )
    if not nu < q_g:
        raise DomainError(f"Laplace factor needs nu < {q_g}, got {nu}", {"nu": nu, "q": fit_g.q})
    value = 0.5 * float(log_phi(q_g - nu, r_g) - log_phi(p_eff - nu, r_f)) + float(
        _log_bic_term(r_g, r_f, q_g, p_eff, n_eff)
    )
    return LogBayesFactor(value, Method.LAPLACE_PHI)


def table_log_bfs(
    table: FitTable,
    method: Method,
    spec: GPriorSpec,
    rows: Optional[Sequence[int]] = None,
    rel_tol: float = DEFAULT_REL_TOL,
) -> np.ndarray:
    """Log Bayes factors against the full model for the given rows of a FitTable.

    The closed-form methods are evaluated on whole arrays; exact quadrature
    falls back to one integral per model.
    """
    rows = np.arange(len(table)) if rows is None else np.asarray(rows, dtype=np.int64)
    full = table.full_index
    n, p = table.n, table.p
    q = table.q[rows]

    if method is Method.BIC:
        r_g, r_f = 1.0 - table.r2[rows], 1.0 - table.r2[full]
        if np.any(r_g <= 0.0) or r_f <= 0.0:
            raise PerfectFit("BIC factor is undefined for a perfect fit (R^2 = 1)")
        return _log_bic_term(r_g, r_f, q, p, n)

    check = spec.variant is Variant.CHECK
    r2 = table.r2_check if check else table.r2
    r_g, r_f = 1.0 - r2[rows], 1.0 - r2[full]
    if not check and np.any(q == 0):
        raise NullModelForbidden("the centered variant is undefined at the null model")
    if np.any(r_g <= 0.0) or r_f <= 0.0:
        raise PerfectFit("Bayes factor is undefined for a perfect fit")
    q_eff = q + 1 if check else q
    p_eff = p + 1 if check else p

    if method is Method.LAPLACE_PHI:
        if np.any(r_g >= 1.0) or r_f >= 1.0:
            raise DomainError("Laplace factor needs 0 < R^2 < 1 for every model")
        if np.any(spec.nu >= q_eff):
            raise DomainError(f"Laplace factor needs nu < q for every model, got nu={spec.nu}")
        n_eff = n + 1 if check else n
        return 0.5 * (log_phi(q_eff - spec.nu, r_g) - log_phi(p_eff - spec.nu, r_f)) + _log_bic_term(
            r_g, r_f, q_eff, p_eff, n_eff
        )

    if method is Method.LAPLACE_EXACT:
        if np.any(r_g >= 1.0) or r_f >= 1.0:
            raise DomainError("Laplace factor needs 0 < R^2 < 1 for every model")
        if np.any(spec.nu >= q_eff) or spec.nu <= -spec.k:
            raise DomainError(f"Laplace factor needs -k < nu < q for every model, got nu={spec.nu}")
        m = 2.0 * spec.outer_exponent_half(n)
        return _laplace_exact_vector(spec, m, q_eff, r_g) - _laplace_exact_vector(
            spec, m, np.array([p_eff]), np.array([r_f])
        )[0]

    # exact quadrature
    for q_i in np.unique(q):
        spec.check_model(int(q_i))
    spec.check_model(p)
    log_j_f = log_integral_J(spec.integral_spec(n, p, float(r_f)), rel_tol)
    out = np.empty(rows.shape[0])
    for j, (q_i, r_i) in enumerate(zip(q, r_g)):
        out[j] = log_integral_J(spec.integral_spec(n, int(q_i), float(r_i)), rel_tol) - log_j_f
    return out


def _laplace_exact_vector(spec: GPriorSpec, m: float, q_eff: np.ndarray, r: np.ndarray) -> np.ndarray:
    q_eff = np.asarray(q_eff, dtype=float)
    r = np.asarray(r, dtype=float)
    log_r = np.log(r)
    tau = np.log(_mode_z(spec.nu, spec.k, m, q_eff, r))
    h_hat = _log_h(tau, spec.nu, spec.k, m, q_eff, log_r)
    curvature = _d2log_h(tau, spec.nu, spec.k, m, q_eff, log_r)
    return 0.5 * LOG_2PI + h_hat - 0.5 * np.log(-curvature)


def benchmark_laplace(
    n_grid: Sequence[int],
    q: int,
    nu: float,
    r: float,
    k: float = 0.0,
    variant: Variant = Variant.CENTERED,
    rel_tol: float = DEFAULT_REL_TOL,
) -> list:
    """Exact quadrature against both Laplace forms, one row per n."""
    prior = GPriorSpec(nu=nu, k=k, variant=variant)
    rows = []
    for n in n_grid:
        spec = prior.integral_spec(int(n), q, r)
        exact = log_integral_J(spec, rel_tol)
        laplace = log_integral_laplace_exact(spec)
        closed = log_integral_phi(spec)
        rows.append({
            "n": int(n),
            "log_j": exact,
            "laplace_exact": laplace,
            "phi_closed_form": closed,
            "abs_err_laplace_exact": abs(laplace - exact),
            "abs_err_phi": abs(closed - exact),
            "rel_err_laplace_exact": abs(laplace - exact) / abs(exact),
            "rel_err_phi": abs(closed - exact) / abs(exact),
        })
    return rows
