import csv
from pathlib import Path
from typing import Iterable, Union
import orjson
from app.schemas.model_schemas import TraceRow
from app.schemas.report_schemas import MetricsReport, ScoreRecord, ScoreReport


def save_trace(path: Union[str, Path], trace: Iterable[TraceRow]) -> None:
    """Loss trace CSV: step,lr,loss."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["step", "lr", "loss"])
        for row in trace:
            writer.writerow([row.step, repr(row.lr), repr(row.loss)])


def save_frame_scores(path: Union[str, Path], report: ScoreReport) -> None:
    """Per-frame CSV for cumulative-curve plots: frame,score,cumulative."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["frame", "score", "cumulative"])
        for frame, (score, total) in enumerate(zip(report.frame_scores, report.cumulative)):
            writer.writerow([frame, repr(score), repr(total)])


def score_record_json(record: ScoreRecord) -> str:
    return orjson.dumps(record.model_dump(), option=orjson.OPT_SORT_KEYS).decode("utf-8")


def save_metrics(path: Union[str, Path], report: MetricsReport) -> None:
    Path(path).write_bytes(
        orjson.dumps(report.to_json_dict(), option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS) + b"\n"
    )
