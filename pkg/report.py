import json
import logging
import datetime
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from bayes_factors import Method
from selection import SelectionReport
from simulation import FrequencyResult, SweepResult

logger = logging.getLogger("Subharmonic.Report")

SCHEMA_VERSION = 1
TIMESTAMP_FIELD = "generated_at"


def _plain(value):
    """Convert numpy scalars/arrays and nested containers to JSON-native types"""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def _envelope(command: str, body: Dict) -> Dict:
    payload = {
        "schema": SCHEMA_VERSION,
        "command": command,
        TIMESTAMP_FIELD: datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    payload.update(body)
    return payload


def dumps_json(payload: Dict) -> str:
    # repr-based float output round-trips every double bit-exactly
    return json.dumps(_plain(payload), indent=2, allow_nan=False) + "\n"


def selection_payload(reports: Sequence[SelectionReport], top: int = 3, dataset: Optional[Dict] = None) -> Dict:
    runs = []
    for report in reports:
        methods = {}
        for label in report.methods:
            ties = report.ties(label, top if top > 0 else len(report))
            ranked = []
            for rank, record in enumerate(report.top(label, top), start=1):
                ranked.append({
                    "rank": rank,
                    "model": record.model.members,
                    "mask": record.model.mask,
                    "q": record.q,
                    "r2": record.r2,
                    "r2_check": record.r2_check,
                    "log_bf": record.log_bf[label],
                    "posterior": record.posterior[label],
                    "tied_with_next": ties[rank - 1] if rank - 1 < len(ties) else False,
                })
            methods[label] = ranked
        runs.append({"metadata": dict(report.metadata), "methods": methods})
    return _envelope("select", {"dataset": dataset or {}, "runs": runs})


def selection_frame(reports: Sequence[SelectionReport], top: int = 3) -> pd.DataFrame:
    rows = []
    for report in reports:
        for label in report.methods:
            for rank, record in enumerate(report.top(label, top), start=1):
                rows.append({
                    "nu": report.metadata["nu"],
                    "k": report.metadata["k"],
                    "method": label,
                    "rank": rank,
                    "model": str(record.model),
                    "q": record.q,
                    "r2": record.r2,
                    "log_bf": record.log_bf[label],
                    "posterior": record.posterior[label],
                })
    return pd.DataFrame(rows)


def render_selection_table(reports: Sequence[SelectionReport], top: int = 3, decimals: int = 3) -> str:
    """Top-k blocks: one column per nu for the g-prior methods, then BIC"""
    if not reports:
        return ""
    blocks = []
    labels = [name for name in reports[0].methods if name != Method.BIC.value]
    for label in labels:
        columns = {}
        for report in reports:
            cells = [f"{r.model} {r.posterior[label]:.{decimals}f}" for r in report.top(label, top)]
            columns[f"nu={report.metadata['nu']:g}"] = cells
        frame = pd.DataFrame(columns, index=pd.RangeIndex(1, len(next(iter(columns.values()))) + 1, name="rank"))
        blocks.append(f"{label}\n{frame.to_string()}")
    if Method.BIC.value in reports[0].methods:
        records = reports[0].top(Method.BIC.value, top)
        frame = pd.DataFrame(
            {"model": [str(r.model) for r in records], "posterior": [round(r.posterior["bic"], decimals) for r in records]},
            index=pd.RangeIndex(1, len(records) + 1, name="rank"),
        )
        blocks.append(f"bic\n{frame.to_string()}")
    return "\n\n".join(blocks) + "\n"


def frequency_frame(results: Sequence[FrequencyResult]) -> pd.DataFrame:
    rows = []
    for result in results:
        design = result.design
        for label, (rank1, top3) in result.frequencies().items():
            rows.append({
                "q_true": design.true_mask.q,
                "sigma": design.sigma,
                "error": str(design.error),
                "n": design.n,
                "method": label,
                "rank1": rank1,
                "top3": top3,
                "replicates": result.replicates,
            })
    return pd.DataFrame(rows)


def frequency_payload(results: Sequence[FrequencyResult], seed: int) -> Dict:
    studies = []
    for result in results:
        design = result.design
        study = {
            "n": design.n,
            "p": design.p,
            "true_model": design.true_mask.members,
            "sigma": design.sigma,
            "error": str(design.error),
            "fixed_predictors": design.fixed_predictors,
            "replicates": result.replicates,
            "frequencies": {
                label: {"rank1": f[0], "top3": f[1]} for label, f in result.frequencies().items()
            },
        }
        if result.top_lists is not None:
            study["top3_masks"] = result.top_lists
        studies.append(study)
    return _envelope("simulate", {"seed": seed, "studies": studies})


def sweep_frame(sweep: SweepResult) -> pd.DataFrame:
    rows = [
        {"n": n, "method": label, "recovery": rate, "replicates": sweep.replicates}
        for n in sweep.n_grid
        for label, rate in sweep.rates[n].items()
    ]
    return pd.DataFrame(rows)


def sweep_payload(sweep: SweepResult, seed: int) -> Dict:
    return _envelope("sweep", {
        "seed": seed,
        "replicates": sweep.replicates,
        "n_grid": sweep.n_grid,
        "recovery": {str(n): sweep.rates[n] for n in sweep.n_grid},
    })


def bench_payload(rows: List[Dict]) -> Dict:
    return _envelope("bench-laplace", {"rows": rows})


def render(frame: pd.DataFrame, fmt: str) -> str:
    if fmt == "csv":
        return frame.to_csv(index=False)
    return frame.to_string(index=False) + "\n"


def write_output(text: str, path: Optional[str] = None) -> None:
    if path:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
        logger.info(f"Report written to {path}")
    else:
        print(text, end="")
