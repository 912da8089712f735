import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from errors import (
    ConstantColumn,
    DataError,
    NonFiniteData,
    NumericalRankLoss,
    RankDeficient,
    TooFewRows,
    TooManyModels,
)

logger = logging.getLogger("Subharmonic.Regression")

DEFAULT_MODEL_CAP = 25
# Smallest admissible |R_ii| / max |R_jj|, i.e. a condition threshold of 1e10
RANK_TOLERANCE = 1e-10
# Upper bound on the number of floats held by one batched QR call
_BATCH_ELEMENTS = 4_000_000


@dataclass(frozen=True)
class RawData:
    """Response vector and predictor matrix as read from a file."""

    y: np.ndarray
    X: np.ndarray
    column_names: Tuple[str, ...]
    response_name: str = "y"

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if y.ndim != 1 or X.ndim != 2:
            raise DataError("y must be a vector and X a matrix")
        if X.shape[0] != y.shape[0]:
            raise DataError(f"y has {y.shape[0]} rows but X has {X.shape[0]}")
        if y.shape[0] < 2:
            raise TooFewRows(f"need at least 2 observations, got {y.shape[0]}")
        if X.shape[1] < 1:
            raise DataError("need at least one predictor")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
            raise NonFiniteData("data contains NaN or infinite entries")
        names = tuple(self.column_names) if self.column_names else tuple(f"x{i + 1}" for i in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise DataError(f"{len(names)} column names for {X.shape[1]} predictors")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "column_names", names)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class Dataset:
    """Standardized predictors (mean 0, x'x/n = 1) with the raw response."""

    y: np.ndarray
    X_std: np.ndarray
    centering_offsets: np.ndarray
    scale_factors: np.ndarray
    n: int
    p: int
    tss_centered: float
    tss_raw: float
    column_names: Tuple[str, ...] = field(default=())

    @property
    def y_centered(self) -> np.ndarray:
        return self.y - self.y.mean()

    def destandardize(self, X_std: np.ndarray) -> np.ndarray:
        """Map standardized columns back to the original predictor scale."""
        return np.asarray(X_std) * self.scale_factors + self.centering_offsets


@dataclass(frozen=True, order=True)
class ModelId:
    """Submodel as a bitmask: bit i-1 set means predictor i is included."""

    mask: int

    def __post_init__(self):
        if self.mask < 0:
            raise DataError(f"model mask must be non-negative, got {self.mask}")

    @classmethod
    def from_members(cls, members: Iterable[int]) -> "ModelId":
        """Build from 1-based predictor indices, e.g. ``{1, 2}``."""
        mask = 0
        for i in members:
            if i < 1:
                raise DataError(f"predictor indices are 1-based, got {i}")
            mask |= 1 << (i - 1)
        return cls(mask)

    @classmethod
    def full(cls, p: int) -> "ModelId":
        return cls((1 << p) - 1)

    @classmethod
    def null(cls) -> "ModelId":
        return cls(0)

    @property
    def q(self) -> int:
        return bin(self.mask).count("1")

    @property
    def indices(self) -> List[int]:
        """0-based column indices in ascending order."""
        return [i for i in range(self.mask.bit_length()) if self.mask >> i & 1]

    @property
    def members(self) -> List[int]:
        return [i + 1 for i in self.indices]

    def is_null(self) -> bool:
        return self.mask == 0

    def fits_in(self, p: int) -> bool:
        return self.mask >> p == 0

    def __str__(self) -> str:
        return "{" + ",".join(str(m) for m in self.members) + "}"


@dataclass(frozen=True)
class FitSummary:
    model: ModelId
    q: int
    rss: float
    r2: float
    r2_check: float


@dataclass(frozen=True)
class FitTable:
    """Column-oriented fits for a whole model set, ordered by ascending mask."""

    masks: np.ndarray
    q: np.ndarray
    rss: np.ndarray
    r2: np.ndarray
    r2_check: np.ndarray
    n: int
    p: int

    def __len__(self) -> int:
        return self.masks.shape[0]

    def index_of(self, model: ModelId) -> int:
        i = int(np.searchsorted(self.masks, model.mask))
        if i >= len(self) or self.masks[i] != model.mask:
            raise KeyError(str(model))
        return i

    def summary(self, i: int) -> FitSummary:
        return FitSummary(
            model=ModelId(int(self.masks[i])),
            q=int(self.q[i]),
            rss=float(self.rss[i]),
            r2=float(self.r2[i]),
            r2_check=float(self.r2_check[i]),
        )

    def summaries(self) -> List[FitSummary]:
        return [self.summary(i) for i in range(len(self))]

    @property
    def full_index(self) -> int:
        return self.index_of(ModelId.full(self.p))


def standardize(raw: RawData) -> Dataset:
    """Center every predictor and scale it so that x'x/n = 1 (divisor n)."""
    n, p = raw.n, raw.p
    if n <= p + 1:
        raise TooFewRows(f"need n > p + 1, got n={n}, p={p}", {"n": n, "p": p})

    offsets = raw.X.mean(axis=0)
    centered = raw.X - offsets
    scales = np.sqrt(np.mean(centered ** 2, axis=0))
    for i in range(p):
        if scales[i] <= 1e-12 * max(1.0, abs(offsets[i])):
            name = raw.column_names[i]
            raise ConstantColumn(f"predictor '{name}' has zero variance", {"column": name, "index": i + 1})
    X_std = centered / scales

    y = raw.y
    tss_centered = float(np.sum((y - y.mean()) ** 2))
    if tss_centered <= 0.0:
        raise ConstantColumn(f"response '{raw.response_name}' is constant", {"column": raw.response_name})

    _, R, _ = scipy.linalg.qr(X_std, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > RANK_TOLERANCE * diag[0]))
    if rank < p:
        raise RankDeficient(f"predictor matrix has rank {rank} < {p}", {"rank": rank, "p": p})

    logger.debug(f"Standardized {p} predictors over {n} observations")
    return Dataset(
        y=y,
        X_std=X_std,
        centering_offsets=offsets,
        scale_factors=scales,
        n=n,
        p=p,
        tss_centered=tss_centered,
        tss_raw=float(y @ y),
        column_names=raw.column_names,
    )


def _summary_from_rss(data: Dataset, model: ModelId, rss: float) -> FitSummary:
    rss = min(max(rss, 0.0), data.tss_centered)
    return FitSummary(
        model=model,
        q=model.q,
        rss=rss,
        r2=1.0 - rss / data.tss_centered,
        r2_check=1.0 - rss / data.tss_raw,
    )


def fit_submodel(data: Dataset, model: ModelId) -> FitSummary:
    """OLS of y on (1, X_gamma) through a column-pivoted QR factorization."""
    if not model.fits_in(data.p):
        raise DataError(f"model {model} refers to predictors beyond p={data.p}")
    if model.is_null():
        return _summary_from_rss(data, model, data.tss_centered)

    yc = data.y_centered
    Xg = data.X_std[:, model.indices]
    Q, R, _ = scipy.linalg.qr(Xg, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag[-1] < RANK_TOLERANCE * diag[0]:
        raise NumericalRankLoss(
            f"columns of model {model} are numerically dependent",
            {"model": model.members},
        )
    resid = yc - Q @ (Q.T @ yc)
    return _summary_from_rss(data, model, float(resid @ resid))


def enumerate_masks(p: int, include_null: bool = False, cap: int = DEFAULT_MODEL_CAP) -> np.ndarray:
    if p < 1:
        raise DataError(f"need at least one predictor, got p={p}")
    if p > cap:
        raise TooManyModels(
            f"{p} predictors exceed the enumeration cap of {cap}",
            {"p": p, "cap": cap},
        )
    start = 0 if include_null else 1
    return np.arange(start, 1 << p, dtype=np.int64)


def enumerate_models(p: int, include_null: bool = False, cap: int = DEFAULT_MODEL_CAP) -> List[ModelId]:
    """All nonempty submodels (and optionally the null one) in ascending mask order."""
    return [ModelId(int(m)) for m in enumerate_masks(p, include_null, cap)]


def _mask_bits(masks: np.ndarray, p: int) -> np.ndarray:
    return ((masks[:, None] >> np.arange(p)) & 1).astype(bool)


def fit_all_submodels(
    data: Dataset,
    masks: Optional[Sequence[int]] = None,
    include_null: bool = False,
    cap: int = DEFAULT_MODEL_CAP,
) -> FitTable:
    """Fit many submodels at once.

    Models of equal size are stacked and factorized together; the QR of the
    centered augmented matrix [X_gamma | y] gives RSS as the square of its
    last diagonal entry.
    """
    if masks is None:
        masks = enumerate_masks(data.p, include_null, cap)
    masks = np.unique(np.asarray(masks, dtype=np.int64))
    if masks.size and (masks[0] < 0 or masks[-1] >> data.p):
        raise DataError(f"model masks must lie within p={data.p} predictors")

    bits = _mask_bits(masks, data.p)
    sizes = bits.sum(axis=1)
    rss = np.empty(masks.shape[0])
    yc = data.y_centered
    n = data.n

    for q in np.unique(sizes):
        rows = np.nonzero(sizes == q)[0]
        if q == 0:
            rss[rows] = data.tss_centered
            continue
        cols = np.nonzero(bits[rows])[1].reshape(rows.shape[0], q)
        chunk = max(1, _BATCH_ELEMENTS // (n * (q + 1)))
        for start in range(0, rows.shape[0], chunk):
            part = rows[start:start + chunk]
            A = np.empty((part.shape[0], n, q + 1))
            A[:, :, :q] = np.transpose(data.X_std[:, cols[start:start + chunk]], (1, 0, 2))
            A[:, :, q] = yc
            R = np.linalg.qr(A, mode="r")
            diag = np.abs(np.diagonal(R[:, :q, :q], axis1=1, axis2=2))
            bad = diag.min(axis=1) < RANK_TOLERANCE * diag.max(axis=1)
            if np.any(bad):
                model = ModelId(int(masks[part[np.argmax(bad)]]))
                raise NumericalRankLoss(
                    f"columns of model {model} are numerically dependent",
                    {"model": model.members},
                )
            rss[part] = R[:, q, q] ** 2

    rss = np.clip(rss, 0.0, data.tss_centered)
    logger.debug(f"Fitted {masks.shape[0]} submodels")
    return FitTable(
        masks=masks,
        q=sizes.astype(np.int64),
        rss=rss,
        r2=1.0 - rss / data.tss_centered,
        r2_check=1.0 - rss / data.tss_raw,
        n=n,
        p=data.p,
    )
