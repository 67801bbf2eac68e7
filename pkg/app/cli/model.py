import logging
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from pathlib import Path
from typing import Optional, TypeVar
import typer
from app.schemas.data_schemas import Manifest, ManifestRecord
from app.schemas.feature_schemas import FeatureKind
from app.schemas.model_schemas import LossKind, TrainConfig
from app.schemas.report_schemas import LabeledScores, ScoreRecord, ScoreReport
from app.services.eval_metrics import metrics_report
from app.services.pipeline import Preprocessing, VideoInputs, build_features, fit_preprocessing, load_video
from app.services.scoring import score_video, window_starts
from app.services.training import check_pairing, model_config_for, train
from app.storage.checkpoints import LoadedCheckpoint, load_checkpoint, save_checkpoint
from app.storage.manifest import load_manifest
from app.storage.reports import save_frame_scores, save_metrics, save_trace, score_record_json
from app.utils.config import get_settings
from app.utils.error_handlers import handle_errors
from app.utils.errors import DataError, UsageError

logger = logging.getLogger(__name__)

E = TypeVar("E", bound=Enum)


def parse_choice(enum: type[E], value: str, flag: str) -> E:
    """Parses a flag value into an enum, as a usage error when it is not a member."""
    try:
        return enum(value)
    except ValueError:
        choices = ", ".join(member.value for member in enum)
        raise UsageError(f"{flag} must be one of: {choices} (got {value!r})") from None


def default_warmup(steps: int) -> int:
    return min(500, max(1, steps // 10))


def load_record(manifest: Manifest, record: ManifestRecord) -> VideoInputs:
    activations = manifest.resolve(record.activations) if record.activations else None
    return load_video(manifest.resolve(record.path), activations)


def real_records(manifest: Manifest, ignore_fakes: bool) -> list[ManifestRecord]:
    """Label-0 records; training never sees fakes."""
    reals = [r for r in manifest.records if r.label == 0]
    n_fakes = len(manifest.records) - len(reals)
    if n_fakes and not ignore_fakes:
        logger.warning("Skipping %d fake records: training uses real videos only", n_fakes)
    if not reals:
        raise DataError("no real training data")
    return reals


# Command to train an anomaly detection model
@handle_errors
def train_model(
    manifest: Path = typer.Option(..., "--manifest", help="Dataset manifest."),
    feature_set: str = typer.Option(..., "--feature-set", help="discrete_delay, distribution, activation_pca, concat_av or raster_codes."),
    loss: str = typer.Option(..., "--loss", help="ce_discrete, soft_ce, bce, mse or raster_ce."),
    steps: int = typer.Option(..., "--steps", min=0, help="Training steps."),
    seed: int = typer.Option(0, "--seed", help="Seed of initialization, shuffling and dropout."),
    out: Path = typer.Option(..., "--out", help="Checkpoint path."),
    ignore_fakes: bool = typer.Option(False, "--ignore-fakes", help="Skip fake records silently."),
    n_blocks: int = typer.Option(2, "--n-blocks"),
    n_heads: int = typer.Option(16, "--n-heads"),
    d_model: int = typer.Option(256, "--d-model"),
    n_max: int = typer.Option(50, "--n-max", help="Window length N."),
    dropout: float = typer.Option(0.1, "--dropout"),
    batch_size: int = typer.Option(16, "--batch-size"),
    lr: float = typer.Option(1e-3, "--lr"),
    warmup: Optional[int] = typer.Option(None, "--warmup", help="Warm-up steps (default min(500, steps/10))."),
    pca_dim: int = typer.Option(31, "--pca-dim", help="PCA dimension D for activation feature sets."),
    codebook_k: int = typer.Option(8, "--codebook-k", help="Codebook size K for raster codes."),
    trace: Optional[Path] = typer.Option(None, "--trace", help="Loss trace CSV (default <out>.trace.csv)."),
):
    """
    Train the autoregressive model on the real records of a manifest.
    """
    kind = parse_choice(FeatureKind, feature_set, "--feature-set")
    loss_kind = parse_choice(LossKind, loss, "--loss")
    check_pairing(loss_kind, kind)
    settings = get_settings()

    data = load_manifest(manifest)
    videos = [load_record(data, record) for record in real_records(data, ignore_fakes)]
    prep = fit_preprocessing(kind, videos, pca_dim=pca_dim, codebook_k=codebook_k, seed=seed)
    features = [build_features(kind, video, prep) for video in videos]
    windows = [
        x.window(start, start + n_max)
        for x in features
        for start in window_starts(x.n_frames, n_max, settings.window_stride)
    ]

    model_cfg = model_config_for(
        loss_kind, kind, features[0].dim,
        n_blocks=n_blocks, n_heads=n_heads, d_model=d_model, n_max=n_max, dropout_rate=dropout,
        raster_k=codebook_k,
    )
    train_cfg = TrainConfig(
        lr_max=lr,
        batch_size=batch_size,
        warmup_steps=warmup if warmup is not None else default_warmup(steps),
        total_steps=steps,
        seed=seed,
        loss=loss_kind,
    )
    result = train(model_cfg, train_cfg, windows)
    save_checkpoint(out, result.params, train_cfg, kind, prep.to_dict())
    trace_path = trace or out.with_name(out.name + ".trace.csv")
    save_trace(trace_path, result.trace)
    logger.info("Wrote checkpoint %s and loss trace %s", out, trace_path)


def _score(ckpt: LoadedCheckpoint, video: VideoInputs) -> ScoreReport:
    prep = Preprocessing.from_dict(ckpt.header.preprocessing)
    x = build_features(ckpt.header.feature_kind, video, prep)
    return score_video(ckpt.params, x, ckpt.header.train_cfg.loss, stride=get_settings().window_stride)


# Command to score one input
@handle_errors
def score(
    model: Path = typer.Option(..., "--model", help="Checkpoint."),
    input: Path = typer.Option(..., "--input", help="Feature file to score."),
    activations: Optional[Path] = typer.Option(None, "--activations", help="Activation file of the same video."),
    per_frame: Optional[Path] = typer.Option(None, "--per-frame", help="Per-frame CSV output."),
):
    """
    Print the anomaly score of one video as a JSON record.
    """
    ckpt = load_checkpoint(model)
    report = _score(ckpt, load_video(input, activations))
    if per_frame is not None:
        save_frame_scores(per_frame, report)
    typer.echo(score_record_json(ScoreRecord(path=str(input), video_score=report.video_score, n_windows=report.n_windows)))


def check_interval(record: ManifestRecord, n_frames: int) -> None:
    if record.interval is not None and record.interval[1] > n_frames:
        raise DataError(f"{record.path}: interval {list(record.interval)} exceeds its {n_frames} frames")


# Command to evaluate a model over a manifest
@handle_errors
def evaluate(
    model: Path = typer.Option(..., "--model", help="Checkpoint."),
    manifest: Path = typer.Option(..., "--manifest", help="Dataset manifest."),
    out: Path = typer.Option(..., "--out", help="metrics.json path."),
    localize: Optional[int] = typer.Option(None, "--localize", min=1, help="Top-k localization (default 5 when intervals exist)."),
    workers: Optional[int] = typer.Option(None, "--workers", min=1, help="Concurrent scoring threads."),
):
    """
    Score every record of a manifest and write AP/AUC (and localization) to metrics.json.
    """
    ckpt = load_checkpoint(model)
    data = load_manifest(manifest)

    def score_record(record: ManifestRecord) -> ScoreReport:
        report = _score(ckpt, load_record(data, record))
        check_interval(record, len(report.frame_scores))
        return report

    with ThreadPoolExecutor(max_workers=workers or get_settings().eval_workers) as pool:
        reports = list(pool.map(score_record, data.records))
    write_metrics(out, data, [r.video_score for r in reports], [r.frame_scores for r in reports], localize)


def write_metrics(out: Path, data: Manifest, video_scores: list[float],
                  frame_scores: list[list[float]], localize: Optional[int]) -> None:
    """Shared by `eval` and `baseline-nb`."""
    scores = LabeledScores(scores=video_scores, labels=[r.label for r in data.records])
    localization = [
        (frames, record.interval)
        for record, frames in zip(data.records, frame_scores)
        if record.interval is not None
    ]
    report = metrics_report(
        scores,
        categories=[r.category for r in data.records],
        localization=localization or None,
        k=localize or 5,
    )
    save_metrics(out, report)
    logger.info("AP %.4f  AUC %.4f  (%d real, %d fake) -> %s", report.ap, report.auc, report.n_real, report.n_fake, out)
