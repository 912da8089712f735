import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from bayes_factors import DEFAULT_REL_TOL, GPriorSpec, Method, Variant, table_log_bfs
from error_models import ErrorModel, bf_moment_correction, log_bic_correction
from errors import EmptyModelSet, InvalidPrior, NegativeWeight
from regression import DEFAULT_MODEL_CAP, Dataset, FitTable, ModelId, enumerate_masks, fit_all_submodels

logger = logging.getLogger("Subharmonic.Selection")

DEFAULT_METHODS = (Method.LAPLACE_EXACT, Method.BIC)
TIE_TOLERANCE = 1e-6


class PriorKind(Enum):
    UNIFORM_NON_NULL = "uniform"
    UNIFORM_ALL = "uniform-all"
    CUSTOM = "custom"


@dataclass(frozen=True)
class ModelPrior:
    kind: PriorKind = PriorKind.UNIFORM_NON_NULL
    weights: Optional[Mapping[ModelId, float]] = None
    min_size: int = 0

    @classmethod
    def uniform_non_null(cls) -> "ModelPrior":
        return cls(PriorKind.UNIFORM_NON_NULL)

    @classmethod
    def uniform_all(cls) -> "ModelPrior":
        return cls(PriorKind.UNIFORM_ALL)

    @classmethod
    def uniform_min_size(cls, q_min: int) -> "ModelPrior":
        """Uniform over models with at least q_min predictors (zero mass below)."""
        return cls(PriorKind.UNIFORM_NON_NULL, min_size=q_min)

    @classmethod
    def custom(cls, weights: Mapping[ModelId, float]) -> "ModelPrior":
        if not weights:
            raise EmptyModelSet("a custom prior needs at least one model")
        for model, w in weights.items():
            if w < 0.0:
                raise NegativeWeight(f"prior weight of {model} is negative ({w})", {"model": model.members})
        total = float(sum(weights.values()))
        if total <= 0.0:
            raise InvalidPrior("custom prior weights sum to zero")
        return cls(PriorKind.CUSTOM, weights={m: w / total for m, w in weights.items()})

    @property
    def admits_null(self) -> bool:
        if self.kind is PriorKind.UNIFORM_ALL:
            return self.min_size == 0
        if self.kind is PriorKind.CUSTOM:
            return self.weights.get(ModelId.null(), 0.0) > 0.0
        return False

    def weights_for(self, masks: np.ndarray) -> np.ndarray:
        """Normalized prior weights over the given masks."""
        masks = np.asarray(masks, dtype=np.int64)
        if self.kind is PriorKind.CUSTOM:
            missing = [int(m) for m in masks if ModelId(int(m)) not in self.weights]
            if missing:
                raise InvalidPrior(
                    f"custom prior has no weight for {len(missing)} models, e.g. {ModelId(missing[0])}",
                    {"missing": missing[:10]},
                )
            w = np.array([self.weights[ModelId(int(m))] for m in masks], dtype=float)
        else:
            w = np.ones(masks.shape[0])
            if self.kind is PriorKind.UNIFORM_NON_NULL:
                w[masks == 0] = 0.0
        if self.min_size:
            sizes = np.array([bin(int(m)).count("1") for m in masks])
            w[sizes < self.min_size] = 0.0
        if np.any(w < 0.0):
            raise NegativeWeight("prior weights must be non-negative")
        total = w.sum()
        if total <= 0.0:
            raise InvalidPrior("prior puts no mass on the model set")
        return w / total


def _posterior_vector(log_bfs: np.ndarray, weights: np.ndarray) -> np.ndarray:
    if log_bfs.shape[0] == 0:
        raise EmptyModelSet("no models to compare")
    if np.any(weights < 0.0):
        raise NegativeWeight("prior weights must be non-negative")
    log_norm = logsumexp(log_bfs, b=weights)
    post = np.zeros_like(log_bfs)
    live = weights > 0.0
    post[live] = weights[live] * np.exp(log_bfs[live] - log_norm)
    return post / post.sum()


def posterior_probabilities(log_bfs: Mapping[ModelId, float], prior: ModelPrior) -> Dict[ModelId, float]:
    """pi_g exp(l_g - m) / sum pi_d exp(l_d - m) through log-sum-exp."""
    if not log_bfs:
        raise EmptyModelSet("no models to compare")
    models = sorted(log_bfs)
    masks = np.array([m.mask for m in models], dtype=np.int64)
    if prior.kind is PriorKind.UNIFORM_NON_NULL and np.any(masks == 0):
        raise InvalidPrior("the null model has zero prior mass under the non-null uniform prior")
    weights = prior.weights_for(masks)
    post = _posterior_vector(np.array([log_bfs[m] for m in models], dtype=float), weights)
    return {m: float(p) for m, p in zip(models, post)}


@dataclass(frozen=True)
class ModelRecord:
    model: ModelId
    q: int
    r2: float
    r2_check: float
    log_bf: Dict[str, float]
    posterior: Dict[str, float]


@dataclass
class SelectionReport:
    """Per-model log Bayes factors and posteriors for each requested method.

    Arrays are aligned with ``masks`` (admissible models, ascending mask).
    """

    masks: np.ndarray
    q: np.ndarray
    r2: np.ndarray
    r2_check: np.ndarray
    log_bfs: Dict[str, np.ndarray]
    posteriors: Dict[str, np.ndarray]
    prior_weights: np.ndarray
    metadata: Dict = field(default_factory=dict)

    @property
    def methods(self) -> List[str]:
        return list(self.log_bfs)

    def __len__(self) -> int:
        return self.masks.shape[0]

    def ranking(self, method: str) -> np.ndarray:
        """Positions sorted by posterior descending, ties by ascending mask."""
        # rank on the log scale so that underflowed posteriors keep their order
        key = self.log_bfs[method] + np.log(self.prior_weights)
        return np.lexsort((self.masks, -key))

    def record(self, i: int) -> ModelRecord:
        return ModelRecord(
            model=ModelId(int(self.masks[i])),
            q=int(self.q[i]),
            r2=float(self.r2[i]),
            r2_check=float(self.r2_check[i]),
            log_bf={m: float(v[i]) for m, v in self.log_bfs.items()},
            posterior={m: float(v[i]) for m, v in self.posteriors.items()},
        )

    def records(self) -> List[ModelRecord]:
        return [self.record(i) for i in range(len(self))]

    def top(self, method: str, k: int = 3) -> List[ModelRecord]:
        order = self.ranking(method)
        return [self.record(int(i)) for i in (order if k <= 0 else order[:k])]

    def rank_of(self, method: str, model: ModelId) -> int:
        """1-based rank of ``model``; 0 when it is not in the admissible set."""
        pos = int(np.searchsorted(self.masks, model.mask))
        if pos >= len(self) or self.masks[pos] != model.mask:
            return 0
        return int(np.nonzero(self.ranking(method) == pos)[0][0]) + 1

    def ties(self, method: str, k: int = 3) -> List[bool]:
        """For each of the top k, whether its posterior is within 1e-6 of the next one."""
        order = self.ranking(method)
        post = self.posteriors[method][order[: k + 1]]
        return [bool(abs(post[i] - post[i + 1]) < TIE_TOLERANCE) if i + 1 < post.shape[0] else False for i in range(min(k, post.shape[0]))]


def method_label(method: Method) -> str:
    return method.value


def _check_prior(spec: GPriorSpec, methods: Sequence[Method], prior: ModelPrior) -> None:
    if prior.admits_null and spec.variant is Variant.CENTERED and any(m is not Method.BIC for m in methods):
        raise InvalidPrior(
            "a prior with mass on the null model needs the check variant (or BIC only)",
            {"methods": [m.value for m in methods]},
        )


def select_from_table(
    table: FitTable,
    spec: GPriorSpec,
    methods: Iterable[Method] = DEFAULT_METHODS,
    prior: Optional[ModelPrior] = None,
    rel_tol: float = DEFAULT_REL_TOL,
    error_models: Optional[Mapping[ModelId, ErrorModel]] = None,
) -> SelectionReport:
    """Score an already fitted model table; the full model is the base of every factor."""
    prior = prior or ModelPrior.uniform_non_null()
    methods = list(dict.fromkeys(methods))
    if not methods:
        raise EmptyModelSet("no methods requested")
    _check_prior(spec, methods, prior)

    weights = prior.weights_for(table.masks)
    rows = np.nonzero(weights > 0.0)[0]
    if rows.shape[0] == 0:
        raise EmptyModelSet("prior leaves no admissible model")
    weights = weights[rows]

    log_bfs, posteriors = {}, {}
    for method in methods:
        label = method_label(method)
        values = np.asarray(table_log_bfs(table, method, spec, rows, rel_tol), dtype=float)
        if error_models:
            values = values + _error_corrections(table, rows, method, spec, error_models)
        log_bfs[label] = values
        posteriors[label] = _posterior_vector(values, weights)

    metadata = {
        "n": table.n,
        "p": table.p,
        "nu": spec.nu,
        "k": spec.k,
        "variant": spec.variant.value,
        "methods": [method_label(m) for m in methods],
        "prior": prior.kind.value,
        "min_size": prior.min_size,
        "rel_tol": rel_tol,
        "models": int(rows.shape[0]),
    }
    return SelectionReport(
        masks=table.masks[rows],
        q=table.q[rows],
        r2=table.r2[rows],
        r2_check=table.r2_check[rows],
        log_bfs=log_bfs,
        posteriors=posteriors,
        prior_weights=weights,
        metadata=metadata,
    )


def _error_corrections(
    table: FitTable,
    rows: np.ndarray,
    method: Method,
    spec: GPriorSpec,
    error_models: Mapping[ModelId, ErrorModel],
) -> np.ndarray:
    full = ModelId.full(table.p)
    err_f = error_models.get(full, ErrorModel.gaussian())
    out = np.zeros(rows.shape[0])
    for j, i in enumerate(rows):
        err_g = error_models.get(ModelId(int(table.masks[i])), err_f)
        if method is Method.BIC:
            out[j] = log_bic_correction(err_g, err_f, table.n)
        else:
            out[j] = bf_moment_correction(err_g, err_f, table.n, spec.nu)
    return out


def select(
    data: Dataset,
    spec: GPriorSpec,
    methods: Iterable[Method] = DEFAULT_METHODS,
    prior: Optional[ModelPrior] = None,
    rel_tol: float = DEFAULT_REL_TOL,
    cap: int = DEFAULT_MODEL_CAP,
    error_models: Optional[Mapping[ModelId, ErrorModel]] = None,
) -> SelectionReport:
    """Fit every admissible submodel and rank it under each method."""
    prior = prior or ModelPrior.uniform_non_null()
    methods = list(methods)
    _check_prior(spec, methods, prior)
    masks = enumerate_masks(data.p, include_null=prior.admits_null, cap=cap)
    table = fit_all_submodels(data, masks)
    logger.info(f"Fitted {len(table)} submodels (n={data.n}, p={data.p})")
    return select_from_table(table, spec, methods, prior, rel_tol, error_models)
