"""Monte Carlo studies: true-model recovery frequencies and consistency sweeps.

Every replicate draws from its own stream, keyed by (seed, replicate index)
through ``numpy.random.SeedSequence`` spawn keys, so replicates can run in
any order and on any number of workers.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from bayes_factors import GPriorSpec, Method, Variant
from error_models import ErrorModel, sample_errors
from errors import DataError
from regression import DEFAULT_MODEL_CAP, ModelId, RawData, enumerate_masks, fit_all_submodels, standardize
from selection import ModelPrior, select_from_table

logger = logging.getLogger("Subharmonic.Simulation")

BENCHMARK_CORRELATIONS = (
    ((1, 2), 0.5),
    ((3, 4), -0.4),
    ((5, 6), 0.3),
    ((7, 8), -0.2),
    ((9, 10), 0.1),
)

# spawn key of the predictor stream; replicate indices stay below it
PREDICTOR_STREAM = 2 ** 31

BENCHMARK_TRUE_MODELS = {
    16: tuple(range(1, 17)),
    12: tuple(range(1, 13)),
    8: (1, 2, 5, 6, 9, 10, 11, 12),
    4: (1, 2, 5, 6),
}


@dataclass(frozen=True)
class SimDesign:
    n: int = 30
    p: int = 16
    predictor_correlations: Tuple[Tuple[Tuple[int, int], float], ...] = BENCHMARK_CORRELATIONS
    true_mask: ModelId = ModelId.from_members(BENCHMARK_TRUE_MODELS[4])
    intercept: float = 1.0
    coef: float = 2.0
    sigma: float = 1.0
    error: ErrorModel = field(default_factory=ErrorModel.gaussian)
    replicates: int = 200
    seed: int = 20240601
    # one predictor matrix shared by every replicate, drawn from its own stream
    fixed_predictors: bool = False

    def __post_init__(self):
        if self.n < 2 or self.p < 1:
            raise DataError(f"design needs n >= 2 and p >= 1, got n={self.n}, p={self.p}")
        used = set()
        for (i, j), rho in self.predictor_correlations:
            if not -1.0 < rho < 1.0:
                raise DataError(f"correlation of ({i},{j}) must lie in (-1, 1), got {rho}")
            if not (1 <= i <= self.p and 1 <= j <= self.p) or i == j or {i, j} & used:
                raise DataError(f"correlated pair ({i},{j}) is out of range or overlaps another pair")
            used |= {i, j}
        if not self.true_mask.fits_in(self.p):
            raise DataError(f"true model {self.true_mask} refers to predictors beyond p={self.p}")
        if self.sigma < 0.0:
            raise DataError(f"sigma must be non-negative, got {self.sigma}")
        if not 1 <= self.replicates < PREDICTOR_STREAM:
            raise DataError(f"replicate count must lie in [1, {PREDICTOR_STREAM}), got {self.replicates}")

    @classmethod
    def benchmark(cls, q_true: int = 4, sigma: float = 1.0, error: Optional[ErrorModel] = None, **kwargs) -> "SimDesign":
        """The 16-predictor, n = 30 design with one of the four nested true models."""
        if q_true not in BENCHMARK_TRUE_MODELS:
            raise DataError(f"true model size must be one of {sorted(BENCHMARK_TRUE_MODELS)}, got {q_true}")
        return cls(
            true_mask=ModelId.from_members(BENCHMARK_TRUE_MODELS[q_true]),
            sigma=sigma,
            error=error or ErrorModel.gaussian(),
            **kwargs,
        )

    @classmethod
    def small(cls, n: int = 50, error: Optional[ErrorModel] = None, **kwargs) -> "SimDesign":
        """Six predictors, three of them active; the base design for consistency sweeps."""
        kwargs.setdefault("true_mask", ModelId.from_members((1, 3, 5)))
        return cls(
            n=n,
            p=6,
            predictor_correlations=BENCHMARK_CORRELATIONS[:3],
            error=error or ErrorModel.gaussian(),
            replicates=kwargs.pop("replicates", 100),
            **kwargs,
        )

    def rng(self, replicate_index: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(replicate_index,)))

    def predictor_rng(self) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(PREDICTOR_STREAM,)))


def generate_predictors(design: SimDesign, rng: np.random.Generator) -> np.ndarray:
    """Gaussian predictors with the design's pairwise correlations, centered and scaled."""
    X = rng.standard_normal((design.n, design.p))
    for (i, j), rho in design.predictor_correlations:
        L = np.linalg.cholesky(np.array([[1.0, rho], [rho, 1.0]]))
        X[:, [i - 1, j - 1]] = X[:, [i - 1, j - 1]] @ L.T
    X = X - X.mean(axis=0)
    return X / np.sqrt(np.mean(X ** 2, axis=0))


def generate_replicate(design: SimDesign, replicate_index: int) -> RawData:
    rng = design.rng(replicate_index)
    if design.fixed_predictors:
        X = generate_predictors(design, design.predictor_rng())
    else:
        X = generate_predictors(design, rng)
    eps = sample_errors(design.error, design.n, rng)
    signal = X[:, design.true_mask.indices].sum(axis=1) if design.true_mask.q else 0.0
    y = design.intercept + design.coef * signal + design.sigma * eps
    return RawData(y=y, X=X, column_names=tuple(f"x{i + 1}" for i in range(design.p)))


@dataclass(frozen=True)
class Scorer:
    """One column of a frequency table: a method, and for g-prior methods its nu."""

    method: Method
    nu: Optional[float] = None

    @property
    def label(self) -> str:
        return self.method.value if self.nu is None else f"{self.method.value}({self.nu:g})"


def build_scorers(methods: Iterable[Method], nus: Sequence[float]) -> List[Scorer]:
    scorers = []
    for method in dict.fromkeys(methods):
        if method is Method.BIC:
            scorers.append(Scorer(method))
        else:
            scorers.extend(Scorer(method, float(nu)) for nu in nus)
    return scorers


@dataclass
class FrequencyResult:
    design: SimDesign
    rank1: Dict[str, int]
    top3: Dict[str, int]
    replicates: int
    top_lists: Optional[Dict[str, List[List[int]]]] = None

    def frequencies(self) -> Dict[str, Tuple[float, float]]:
        return {
            label: (self.rank1[label] / self.replicates, self.top3[label] / self.replicates)
            for label in self.rank1
        }


def _score_replicate(
    design: SimDesign,
    index: int,
    scorers: Sequence[Scorer],
    k: float,
    variant: Variant,
    prior: ModelPrior,
    cap: int,
) -> Dict[str, List[int]]:
    data = standardize(generate_replicate(design, index))
    masks = enumerate_masks(design.p, include_null=prior.admits_null, cap=cap)
    table = fit_all_submodels(data, masks)
    tops = {}
    for scorer in scorers:
        spec = GPriorSpec(nu=scorer.nu if scorer.nu is not None else 0.5, k=k, variant=variant)
        report = select_from_table(table, spec, [scorer.method], prior)
        order = report.ranking(scorer.method.value)[:3]
        tops[scorer.label] = [int(report.masks[i]) for i in order]
    return tops


def run_frequency_study(
    design: SimDesign,
    methods: Iterable[Method],
    nus: Sequence[float] = (0.5,),
    k: float = 0.0,
    variant: Variant = Variant.CENTERED,
    prior: Optional[ModelPrior] = None,
    threads: int = 1,
    keep_top: bool = False,
    cap: int = DEFAULT_MODEL_CAP,
) -> FrequencyResult:
    """How often the true model ranks first and how often it is in the top 3."""
    prior = prior or ModelPrior.uniform_non_null()
    scorers = build_scorers(methods, nus)
    rank1 = {s.label: 0 for s in scorers}
    top3 = {s.label: 0 for s in scorers}
    top_lists = {s.label: [] for s in scorers} if keep_top else None
    true = design.true_mask.mask

    def work(index):
        return _score_replicate(design, index, scorers, k, variant, prior, cap)

    logger.info(
        f"Running {design.replicates} replicates (n={design.n}, p={design.p}, q_T={design.true_mask.q}, "
        f"sigma={design.sigma}, error={design.error}) on {threads} worker(s)"
    )
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        # map preserves replicate order, so the optional dump is deterministic
        for tops in pool.map(work, range(design.replicates)):
            for label, masks in tops.items():
                rank1[label] += int(masks[0] == true)
                top3[label] += int(true in masks)
                if keep_top:
                    top_lists[label].append(masks)

    return FrequencyResult(design=design, rank1=rank1, top3=top3, replicates=design.replicates, top_lists=top_lists)


@dataclass
class SweepResult:
    n_grid: List[int]
    rates: Dict[int, Dict[str, float]]
    replicates: int


def run_consistency_sweep(
    base_design: SimDesign,
    n_grid: Sequence[int],
    methods: Iterable[Method],
    nus: Sequence[float] = (0.5,),
    k: float = 0.0,
    variant: Variant = Variant.CENTERED,
    prior: Optional[ModelPrior] = None,
    threads: int = 1,
) -> SweepResult:
    """True-model recovery rate per sample size with p held fixed."""
    methods = list(methods)
    rates = {}
    for n in n_grid:
        result = run_frequency_study(replace(base_design, n=int(n)), methods, nus, k, variant, prior, threads)
        rates[int(n)] = {label: f[0] for label, f in result.frequencies().items()}
        logger.info(f"n={n}: {rates[int(n)]}")
    return SweepResult(n_grid=[int(n) for n in n_grid], rates=rates, replicates=base_design.replicates)


@dataclass
class R2RatioStatistics:
    """Per replicate: max over gamma strictly containing T of n log((1-R2_T)/(1-R2_gamma)),
    and max over gamma missing a true predictor of (1-R2_T)/(1-R2_gamma)."""

    log_superset: np.ndarray
    subset_ratio: np.ndarray


def r2_ratio_statistics(design: SimDesign, replicates: Optional[int] = None) -> R2RatioStatistics:
    replicates = replicates or design.replicates
    true = design.true_mask.mask
    masks = enumerate_masks(design.p)
    supersets = (masks & true) == true
    supersets &= masks != true
    misses = (masks & true) != true
    log_superset = np.full(replicates, -np.inf)
    subset_ratio = np.full(replicates, -np.inf)
    for index in range(replicates):
        table = fit_all_submodels(standardize(generate_replicate(design, index)), masks)
        r_true = 1.0 - table.r2[table.index_of(design.true_mask)]
        r = 1.0 - table.r2
        if np.any(supersets):
            log_superset[index] = np.max(design.n * (np.log(r_true) - np.log(r[supersets])))
        if np.any(misses):
            subset_ratio[index] = np.max(r_true / r[misses])
    return R2RatioStatistics(log_superset=log_superset, subset_ratio=subset_ratio)
