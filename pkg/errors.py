from typing import Dict, Optional


class SubharmonicError(Exception):
    """Base class for every error raised by the library.

    Each subclass carries a stable ``code`` that the CLI puts in its error JSON.
    """

    code = "subharmonic_error"

    def __init__(self, message: str, details: Optional[Dict] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict:
        return {
            "error": self.code,
            "type": type(self).__name__,
            "message": self.message,
            "details": self.details,
        }


# Data and regression errors

class DataError(SubharmonicError):
    code = "data_error"


class ConstantColumn(DataError):
    code = "constant_column"


class RankDeficient(DataError):
    code = "rank_deficient"


class TooFewRows(DataError):
    code = "too_few_rows"


class NonFiniteData(DataError):
    code = "non_finite_data"


class NumericalRankLoss(DataError):
    code = "numerical_rank_loss"


class TooManyModels(DataError):
    code = "too_many_models"


class ParseError(DataError):
    code = "parse_error"


class EmptyFile(DataError):
    code = "empty_file"


class UnknownColumn(DataError):
    code = "unknown_column"


# Bayes factor engine errors

class BayesFactorError(SubharmonicError):
    code = "bayes_factor_error"


class DivergentIntegral(BayesFactorError):
    code = "divergent_integral"


class NonConvergent(BayesFactorError):
    code = "non_convergent"


class DomainError(BayesFactorError):
    code = "domain_error"


class NullModelForbidden(BayesFactorError):
    code = "null_model_forbidden"


class PerfectFit(BayesFactorError):
    code = "perfect_fit"


class MomentDiverges(BayesFactorError):
    code = "moment_diverges"


class UnsupportedFamily(BayesFactorError):
    code = "unsupported_family"


class RootMismatch(BayesFactorError):
    code = "root_mismatch"


# Selection errors

class SelectionError(SubharmonicError):
    code = "selection_error"


class EmptyModelSet(SelectionError):
    code = "empty_model_set"


class NegativeWeight(SelectionError):
    code = "negative_weight"


class InvalidPrior(SelectionError):
    code = "invalid_prior"


class ConfigError(SubharmonicError):
    code = "config_error"
