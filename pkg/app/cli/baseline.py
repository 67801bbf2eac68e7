from pathlib import Path
from typing import Optional
import typer
from app.cli.model import check_interval, load_record, real_records, write_metrics
from app.services.pipeline import video_delays
from app.services.scoring import naive_bayes_score
from app.services.training import naive_bayes_fit
from app.storage.manifest import load_manifest
from app.utils.error_handlers import handle_errors


# Command to evaluate the Naive Bayes baseline
@handle_errors
def baseline_nb(
    manifest: Path = typer.Option(..., "--manifest", help="Dataset manifest."),
    out: Path = typer.Option(..., "--out", help="metrics.json path."),
    localize: Optional[int] = typer.Option(None, "--localize", min=1, help="Top-k localization (default 5 when intervals exist)."),
):
    """
    Fit the frame-independent delay model on the real records and evaluate it on all records.
    """
    data = load_manifest(manifest)
    delays = {id(record): video_delays(load_record(data, record)) for record in data.records}
    model = naive_bayes_fit(delays[id(record)] for record in real_records(data, ignore_fakes=True))
    reports = []
    for record in data.records:
        report = naive_bayes_score(model, delays[id(record)])
        check_interval(record, len(report.frame_scores))
        reports.append(report)
    write_metrics(out, data, [r.video_score for r in reports], [r.frame_scores for r in reports], localize)
