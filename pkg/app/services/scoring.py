"""
Anomaly scores from a trained model: per-frame losses, cumulative curves, window scores and
video scores. Higher always means more likely fake.
"""
import logging
from typing import Optional, Sequence
import numpy as np
import torch
from app.schemas.feature_schemas import DiscreteDelaySequence, FeatureSequence
from app.schemas.model_schemas import LOSS_HEADS, LossKind, NaiveBayesModel
from app.schemas.report_schemas import ScoreReport, WindowScore
from app.services.ar_model import SyncDecoder
from app.services.training import check_pairing, frame_losses, sequence_tensors
from app.utils.errors import DataError, UsageError

logger = logging.getLogger(__name__)

DEFAULT_STRIDE = 25


def _report(frame_scores: np.ndarray, windows: list[WindowScore], short_input: bool = False) -> ScoreReport:
    return ScoreReport(
        frame_scores=[float(s) for s in frame_scores],
        cumulative=[float(s) for s in np.cumsum(frame_scores)],
        window_scores=windows,
        video_score=float(np.mean([w.score for w in windows])),
        short_input=short_input,
    )


def _frame_scores(params: SyncDecoder, x: FeatureSequence, loss: LossKind) -> np.ndarray:
    check_pairing(loss, x.kind)
    if params.config.head is not LOSS_HEADS[loss]:
        raise UsageError(f"loss {loss.value} does not match the model's {params.config.head.value} head")
    dtype = next(params.parameters()).dtype
    inputs, targets = sequence_tensors(x, loss, dtype)
    was_training = params.training
    params.eval()
    try:
        with torch.no_grad():
            losses = frame_losses(params, inputs[None], targets[None], loss)[0]
    finally:
        params.train(was_training)
    return losses.double().numpy()


# Function to score a sequence as a single window
def score_sequence(params: SyncDecoder, x: FeatureSequence, loss: LossKind) -> ScoreReport:
    """
    Teacher-forced per-frame losses of `x` in inference mode.

    - **Parameters**:
        - `params`: Trained decoder.
        - `x`: Feature sequence of at most `n_max` frames.
        - `loss`: Loss used as the frame score; must pair with `x.kind`.

    - **Returns**:
        - A report with one window starting at frame 0.

    - **Raises**:
        - UsageError: On a loss / feature kind / head mismatch.
    """
    scores = _frame_scores(params, x, loss)
    return _report(scores, [WindowScore(start=0, score=float(scores.mean()))])


def window_starts(n_frames: int, window: int, stride: int) -> list[int]:
    """
    Sliding-window starts at `stride`, plus a final window ending at `n_frames` when the stride
    does not land there.
    """
    if n_frames <= window:
        return [0]
    starts = list(range(0, n_frames - window + 1, stride))
    if starts[-1] + window < n_frames:
        starts.append(n_frames - window)
    return starts


# Function to score a video of any length
def score_video(params: SyncDecoder, x: FeatureSequence, loss: LossKind,
                window: Optional[int] = None, stride: int = DEFAULT_STRIDE) -> ScoreReport:
    """
    Scores sliding windows of `window` frames (default `n_max`) and averages their mean frame
    losses into the video score.

    Each frame's score is taken from the earliest window covering it, which is the window giving
    that frame the most history.

    - **Parameters**:
        - `params`: Trained decoder.
        - `x`: Feature sequence.
        - `loss`: Loss used as the frame score.
        - `window`: Window length N; defaults to the model's `n_max`.
        - `stride`: Window stride.

    - **Returns**:
        - The video report; `short_input` is set when `x` is shorter than one window.
    """
    window = window or params.config.n_max
    if window > params.config.n_max:
        raise DataError(f"window of {window} frames exceeds n_max={params.config.n_max}")
    if stride < 1:
        raise UsageError("stride must be positive")
    if x.n_frames < window:
        logger.warning("Input has %d frames, fewer than the %d-frame window: scored as one window",
                       x.n_frames, window)
        report = score_sequence(params, x, loss)
        return report.model_copy(update={"short_input": True})

    frame_scores = np.full(x.n_frames, np.nan)
    windows = []
    for start in window_starts(x.n_frames, window, stride):
        scores = _frame_scores(params, x.window(start, start + window), loss)
        windows.append(WindowScore(start=start, score=float(scores.mean())))
        span = frame_scores[start:start + window]
        unset = np.isnan(span)
        span[unset] = scores[unset]
    return _report(frame_scores, windows)


def naive_bayes_score(model: NaiveBayesModel, x: DiscreteDelaySequence) -> ScoreReport:
    """
    Frame score -log p(delay); the video score is their mean.

    - **Raises**:
        - DataError: If `x` was built with a different delay window.
    """
    if x.config.width != model.config.width:
        raise DataError(f"delays use W={x.config.width}, the model W={model.config.width}")
    scores = -np.log(model.probabilities[x.columns])
    return _report(scores, [WindowScore(start=0, score=float(scores.mean()))])


def localize(frame_scores: Sequence[float], k: int) -> list[int]:
    """
    Indices of the k largest frame scores, largest first; ties go to earlier frames.
    """
    scores = np.asarray(frame_scores, dtype=np.float64)
    if not 0 <= k <= len(scores):
        raise DataError(f"k={k} outside [0, {len(scores)}]")
    order = np.lexsort((np.arange(len(scores)), -scores))
    return [int(i) for i in order[:k]]


def localization_hit(indices: Sequence[int], interval: tuple[int, int]) -> bool:
    """True when any index falls inside the manipulated interval [start, end)."""
    start, end = interval
    return any(start <= i < end for i in indices)
