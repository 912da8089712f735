import logging
import os
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd

from errors import EmptyFile, ParseError, UnknownColumn
from regression import RawData

logger = logging.getLogger("Subharmonic.Datasets")

DATA_DIR = Path(__file__).resolve().parent / "data"
BUNDLED = {
    "hald": DATA_DIR / "hald.csv",
    "uscrime": DATA_DIR / "uscrime.csv",
}
# Columns left on their original scale by the US Crime log transform
USCRIME_UNLOGGED = ("So",)


def load_csv(path: Union[str, Path], response: Optional[str] = None) -> RawData:
    """Read a headed CSV; the response is ``response`` or the last column."""
    path = Path(path)
    if not path.exists() or path.stat().st_size == 0:
        raise EmptyFile(f"{path} is missing or empty", {"path": str(path)})
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise EmptyFile(f"{path} has no header row", {"path": str(path)})
    except pd.errors.ParserError as e:
        raise ParseError(f"{path}: {e}", {"path": str(path)})
    if frame.shape[0] == 0:
        raise EmptyFile(f"{path} has a header but no data rows", {"path": str(path)})

    values = np.empty(frame.shape, dtype=float)
    for j, column in enumerate(frame.columns):
        for i, cell in enumerate(frame[column]):
            # header is line 1, so data row i sits on line i + 2
            if cell is None or (isinstance(cell, float) and np.isnan(cell)) or str(cell).strip() == "":
                raise ParseError(
                    f"{path}: missing value at line {i + 2}, column '{column}'",
                    {"line": i + 2, "column": column},
                )
            try:
                values[i, j] = float(cell)
            except ValueError:
                raise ParseError(
                    f"{path}: non-numeric cell '{cell}' at line {i + 2}, column '{column}'",
                    {"line": i + 2, "column": column, "cell": str(cell)},
                )

    columns = [str(c).strip() for c in frame.columns]
    response = response or columns[-1]
    if response not in columns:
        raise UnknownColumn(f"response column '{response}' not in {path}", {"columns": columns})
    r = columns.index(response)
    predictors = [c for k, c in enumerate(columns) if k != r]
    logger.info(f"Loaded {path.name}: n={values.shape[0]}, p={len(predictors)}, response '{response}'")
    return RawData(
        y=values[:, r],
        X=np.delete(values, r, axis=1),
        column_names=tuple(predictors),
        response_name=response,
    )


def load_dataset(name: str) -> RawData:
    """A bundled dataset with its documented preprocessing."""
    key = name.lower()
    if key not in BUNDLED:
        raise UnknownColumn(f"no bundled dataset '{name}'", {"choices": sorted(BUNDLED)})
    raw = load_csv(BUNDLED[key])
    if key == "uscrime":
        keep = np.array([c in USCRIME_UNLOGGED for c in raw.column_names])
        X = raw.X.copy()
        X[:, ~keep] = np.log(X[:, ~keep])
        raw = RawData(y=np.log(raw.y), X=X, column_names=raw.column_names, response_name=raw.response_name)
    return raw


def resolve_input(spec: str, response: Optional[str] = None) -> RawData:
    """A file path, or the name of a bundled dataset (``hald``, ``uscrime.csv``)."""
    if os.path.exists(spec):
        return load_csv(spec, response)
    stem = Path(spec).stem.lower()
    if stem in BUNDLED:
        return load_dataset(stem)
    raise EmptyFile(f"input '{spec}' is neither a file nor a bundled dataset", {"path": spec})
