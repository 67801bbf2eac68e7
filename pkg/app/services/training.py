"""
Losses for every feature set, the warm-up/cosine schedule, the training loop, the
finite-difference gradient check and the Naive Bayes baseline fit.
"""
import logging
import math
from typing import Iterable, Iterator, NamedTuple, Sequence
import numpy as np
import torch
from app.schemas.feature_schemas import DiscreteDelaySequence, FeatureKind, FeatureSequence
from app.schemas.model_schemas import (
    LOSS_FEATURES,
    LOSS_HEADS,
    ArConfig,
    HeadKind,
    LossKind,
    NaiveBayesModel,
    TraceRow,
    TrainConfig,
)
from app.services.ar_model import SyncDecoder, init_params
from app.services.sync_features import EPS
from app.utils.errors import DataError, UsageError

logger = logging.getLogger(__name__)

LOG_EVERY = 100
GRAD_CHECK_STEP = 1e-5
GRAD_CHECK_FLOOR = 1e-5
GRAD_CHECK_PARAM_STD = 0.3


def _same_shape(pred: torch.Tensor, target: torch.Tensor) -> None:
    if pred.shape != target.shape:
        raise DataError(f"prediction shape {tuple(pred.shape)} does not match target shape {tuple(target.shape)}")


"""
Per-frame losses: every tensor has leading batch/frame dims (..., T) and the losses reduce the
trailing feature dims only.
"""

def frame_loss_ce_discrete(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    if pred.shape[:-1] != target.shape:
        raise DataError(f"targets of shape {tuple(target.shape)} do not match predictions {tuple(pred.shape)}")
    width = pred.shape[-1]
    if target.numel() and (target.min() < 0 or target.max() >= width):
        raise DataError(f"target delay index outside [0, {width})")
    picked = torch.gather(pred, -1, target.long().unsqueeze(-1)).squeeze(-1)
    return -torch.log(picked.clamp_min(EPS))


def frame_loss_soft_ce(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    _same_shape(pred, target)
    return -(target * torch.log(pred.clamp_min(EPS))).sum(dim=-1)


def frame_loss_bce(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    _same_shape(pred, target)
    p = pred.clamp(EPS, 1.0 - EPS)
    return -(target * torch.log(p) + (1.0 - target) * torch.log(1.0 - p)).sum(dim=-1)


def frame_loss_mse(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    _same_shape(pred, target)
    return ((pred - target) ** 2).sum(dim=-1)


def frame_loss_raster(logits: torch.Tensor, codes: torch.Tensor) -> torch.Tensor:
    """Mean K-way cross entropy over the W cells of each frame."""
    if logits.shape[:-1] != codes.shape:
        raise DataError(f"codes of shape {tuple(codes.shape)} do not match logits {tuple(logits.shape)}")
    k = logits.shape[-1]
    if codes.numel() and (codes.min() < 0 or codes.max() >= k):
        raise DataError(f"code outside [0, {k})")
    log_probs = torch.log_softmax(logits, dim=-1)
    picked = torch.gather(log_probs, -1, codes.long().unsqueeze(-1)).squeeze(-1)
    return -picked.mean(dim=-1)


FRAME_LOSSES = {
    LossKind.CE_DISCRETE: frame_loss_ce_discrete,
    LossKind.SOFT_CE: frame_loss_soft_ce,
    LossKind.BCE: frame_loss_bce,
    LossKind.MSE: frame_loss_mse,
    LossKind.RASTER_CE: frame_loss_raster,
}


# Mean over frames of each per-frame loss
def loss_ce_discrete(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return frame_loss_ce_discrete(pred, target).mean()


def loss_soft_ce(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return frame_loss_soft_ce(pred, target).mean()


def loss_bce(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return frame_loss_bce(pred, target).mean()


def loss_mse(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return frame_loss_mse(pred, target).mean()


def loss_raster(logits: torch.Tensor, codes: torch.Tensor) -> torch.Tensor:
    return frame_loss_raster(logits, codes).mean()


# Function to validate the loss / feature set pairing
def check_pairing(loss: LossKind, kind: FeatureKind) -> None:
    """
    - **Raises**:
        - UsageError: If `loss` cannot be trained on features of `kind`.
    """
    if kind not in LOSS_FEATURES[loss]:
        allowed = ", ".join(sorted(k.value for k in LOSS_FEATURES[loss]))
        raise UsageError(f"loss {loss.value} cannot be used with feature set {kind.value} (expected {allowed})")


def model_config_for(loss: LossKind, kind: FeatureKind, dim: int, **overrides) -> ArConfig:
    """
    Model configuration whose head and widths match the loss and feature set.

    - **Parameters**:
        - `loss`: Loss variant.
        - `kind`: Feature set.
        - `dim`: Feature width (W for distributions, discrete delays and raster grids).
        - `overrides`: Any other ArConfig fields.
    """
    check_pairing(loss, kind)
    head = LOSS_HEADS[loss]
    if head is HeadKind.RASTER_CODEBOOK:
        k = overrides.pop("raster_k", 8)
        return ArConfig(d_in=dim, d_out=k, raster_k=k, head=head, **overrides)
    return ArConfig(d_in=dim, d_out=dim, head=head, **overrides)


def sequence_tensors(x: FeatureSequence, loss: LossKind,
                     dtype: torch.dtype = torch.float32) -> tuple[torch.Tensor, torch.Tensor]:
    """
    Model inputs and loss targets of one sequence (no batch dim).
    """
    data = torch.from_numpy(x.data.copy())
    if loss is LossKind.RASTER_CE:
        codes = data.long()
        return codes, codes
    inputs = data.to(dtype)
    if loss is LossKind.CE_DISCRETE:
        return inputs, data.argmax(dim=-1)
    return inputs, inputs


def frame_losses(params: SyncDecoder, inputs: torch.Tensor, targets: torch.Tensor,
                 loss: LossKind) -> torch.Tensor:
    """Per-frame losses, B x T, in the module's current train/eval mode."""
    if loss is LossKind.RASTER_CE:
        return frame_loss_raster(params.forward_raster(inputs), targets)
    return FRAME_LOSSES[loss](params(inputs), targets)


def sequence_loss(params: SyncDecoder, x: FeatureSequence, loss: LossKind) -> float:
    """Training loss of one sequence (mean frame loss) in inference mode."""
    check_pairing(loss, x.kind)
    dtype = next(params.parameters()).dtype
    inputs, targets = sequence_tensors(x, loss, dtype)
    was_training = params.training
    params.eval()
    try:
        with torch.no_grad():
            return float(frame_losses(params, inputs[None], targets[None], loss).mean())
    finally:
        params.train(was_training)


# Function to compute the learning rate of a step
def lr_at(step: int, cfg: TrainConfig) -> float:
    """
    Linear warm-up to `lr_max`, then cosine decay to 0 at `total_steps`.

    - **Raises**:
        - UsageError: If `step` is outside [0, total_steps].
    """
    if not 0 <= step <= cfg.total_steps:
        raise UsageError(f"step {step} outside [0, {cfg.total_steps}]")
    if step < cfg.warmup_steps:
        return cfg.lr_max * (step + 1) / cfg.warmup_steps
    phase = (step - cfg.warmup_steps) / (cfg.total_steps - cfg.warmup_steps)
    return cfg.lr_max * 0.5 * (1.0 + math.cos(math.pi * phase))


class TrainResult(NamedTuple):
    params: SyncDecoder
    trace: list[TraceRow]


def _validate_data(model_cfg: ArConfig, train_cfg: TrainConfig, data: Sequence[FeatureSequence]) -> None:
    if not data:
        raise DataError("no training data")
    if model_cfg.head is not LOSS_HEADS[train_cfg.loss]:
        raise UsageError(
            f"loss {train_cfg.loss.value} needs the {LOSS_HEADS[train_cfg.loss].value} head, "
            f"model has {model_cfg.head.value}"
        )
    for index, x in enumerate(data):
        check_pairing(train_cfg.loss, x.kind)
        if x.n_frames > model_cfg.n_max:
            raise DataError(f"sequence {index} has {x.n_frames} frames, more than n_max={model_cfg.n_max}")
        if x.dim != model_cfg.d_in:
            raise DataError(f"sequence {index} has width {x.dim}, model expects {model_cfg.d_in}")


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    while True:
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield order[start:start + batch_size]


def _batch_loss(params: SyncDecoder, tensors: list[tuple[torch.Tensor, torch.Tensor]],
                batch: np.ndarray, loss: LossKind) -> torch.Tensor:
    # Sequences are stacked per length; the loss is the mean over every frame in the batch
    by_length: dict[int, list[int]] = {}
    for index in batch:
        by_length.setdefault(tensors[index][0].shape[0], []).append(int(index))
    total, n_frames = None, 0
    for length in sorted(by_length):
        members = by_length[length]
        inputs = torch.stack([tensors[i][0] for i in members])
        targets = torch.stack([tensors[i][1] for i in members])
        losses = frame_losses(params, inputs, targets, loss)
        total = losses.sum() if total is None else total + losses.sum()
        n_frames += losses.numel()
    return total / n_frames


# Function to train the autoregressive model
def train(model_cfg: ArConfig, train_cfg: TrainConfig, data: Sequence[FeatureSequence],
          dtype: torch.dtype = torch.float32) -> TrainResult:
    """
    Teacher-forced training with AdamW, gradient-norm clipping and the warm-up/cosine schedule.

    - **Parameters**:
        - `model_cfg`: Decoder configuration; its head must match the loss.
        - `train_cfg`: Optimization recipe; `seed` drives initialization, shuffling and dropout.
        - `data`: Training sequences, each at most `n_max` frames.
        - `dtype`: Parameter dtype.

    - **Returns**:
        - Final parameters (eval mode) and the per-step loss trace. Bitwise deterministic given
          the seed when torch runs single-threaded.

    - **Raises**:
        - DataError: If `data` is empty or a sequence does not fit the model.
        - UsageError: If the loss does not match the feature kind or the model head.
    """
    data = list(data)
    _validate_data(model_cfg, train_cfg, data)
    params = init_params(model_cfg, train_cfg.seed, dtype)
    trace: list[TraceRow] = []
    if train_cfg.total_steps == 0:
        return TrainResult(params, trace)

    tensors = [sequence_tensors(x, train_cfg.loss, dtype) for x in data]
    rng = np.random.default_rng(train_cfg.seed)
    batches = _batches(len(data), train_cfg.batch_size, rng)
    optimizer = torch.optim.AdamW(
        params.parameters(),
        lr=train_cfg.lr_max,
        betas=(train_cfg.adam_beta1, train_cfg.adam_beta2),
        eps=train_cfg.adam_eps,
        weight_decay=train_cfg.weight_decay,
    )
    logger.info(
        "Training %s on %d sequences for %d steps (batch %d)",
        train_cfg.loss.value, len(data), train_cfg.total_steps, train_cfg.batch_size,
    )

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(train_cfg.seed)
        params.train()
        for step in range(train_cfg.total_steps):
            lr = lr_at(step, train_cfg)
            for group in optimizer.param_groups:
                group["lr"] = lr
            optimizer.zero_grad(set_to_none=True)
            value = _batch_loss(params, tensors, next(batches), train_cfg.loss)
            value.backward()
            torch.nn.utils.clip_grad_norm_(params.parameters(), train_cfg.grad_clip)
            optimizer.step()
            trace.append(TraceRow(step=step, lr=lr, loss=float(value.detach())))
            if step % LOG_EVERY == 0 or step == train_cfg.total_steps - 1:
                logger.info("step %d  lr %.3e  loss %.5f", step, lr, trace[-1].loss)
    params.eval()
    return TrainResult(params, trace)


def _random_batch(cfg: ArConfig, loss: LossKind, n_frames: int, batch: int,
                  gen: torch.Generator) -> tuple[torch.Tensor, torch.Tensor]:
    shape = (batch, n_frames, cfg.d_in)
    if loss is LossKind.RASTER_CE:
        codes = torch.randint(0, cfg.raster_k, shape, generator=gen)
        return codes, codes
    if loss is LossKind.CE_DISCRETE:
        index = torch.randint(0, cfg.d_in, shape[:-1], generator=gen)
        return torch.nn.functional.one_hot(index, cfg.d_in).double(), index
    values = torch.randn(shape, generator=gen, dtype=torch.float64)
    if loss in (LossKind.SOFT_CE, LossKind.BCE):
        values = torch.softmax(values, dim=-1)
    return values, values


def relative_error(analytic: torch.Tensor, numeric: torch.Tensor) -> torch.Tensor:
    """Elementwise |a - n| / max(|a|, |n|, 1e-5)."""
    denom = torch.maximum(analytic.abs(), numeric.abs()).clamp_min(GRAD_CHECK_FLOOR)
    return (analytic - numeric).abs() / denom


# Function to compare analytic and numerical gradients
def grad_check(model_cfg: ArConfig, loss: LossKind, seed: int = 0, n_frames: int = 4,
               batch: int = 2, h: float = GRAD_CHECK_STEP) -> float:
    """
    Maximum relative error between autograd gradients of the full loss and central finite
    differences, over every element of every parameter tensor, in double precision.

    Parameters are redrawn from normal(0, 0.3) so every tensor (layer-norm scales and biases
    included) is exercised away from its initial value. The relative error of an element is
    |a - n| / max(|a|, |n|, 1e-5).

    - **Parameters**:
        - `model_cfg`: A tiny configuration (dropout is disabled for the check).
        - `loss`: Loss variant; must match the head of `model_cfg`.
        - `seed`: Seeds parameters and the random batch.
        - `n_frames`, `batch`: Size of the random batch.
        - `h`: Finite-difference step.

    - **Returns**:
        - The maximum relative error.
    """
    cfg = model_cfg.model_copy(update={"dropout_rate": 0.0})
    if cfg.head is not LOSS_HEADS[loss]:
        raise UsageError(f"loss {loss.value} needs the {LOSS_HEADS[loss].value} head, model has {cfg.head.value}")
    params = init_params(cfg, seed, torch.float64)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in params.parameters():
            p.copy_(torch.randn(p.shape, generator=gen, dtype=torch.float64) * GRAD_CHECK_PARAM_STD)
    inputs, targets = _random_batch(cfg, loss, n_frames, batch, gen)

    def objective() -> torch.Tensor:
        return frame_losses(params, inputs, targets, loss).mean()

    params.zero_grad(set_to_none=True)
    objective().backward()

    worst = 0.0
    with torch.no_grad():
        for name, p in params.named_parameters():
            analytic = p.grad.detach().reshape(-1).clone()
            flat = p.data.view(-1)
            numeric = torch.empty_like(flat)
            for i in range(flat.numel()):
                original = flat[i].item()
                flat[i] = original + h
                plus = objective().item()
                flat[i] = original - h
                minus = objective().item()
                flat[i] = original
                numeric[i] = (plus - minus) / (2.0 * h)
            err = float(relative_error(analytic, numeric).max())
            logger.debug("grad check %s: max rel err %.3e", name, err)
            worst = max(worst, err)
    return worst


# Function to fit the Naive Bayes baseline
def naive_bayes_fit(train: Iterable[DiscreteDelaySequence]) -> NaiveBayesModel:
    """
    Position-independent categorical over the W offsets from pooled frame counts, add-1 smoothed.

    - **Raises**:
        - DataError: If `train` is empty or mixes delay windows.
    """
    train = list(train)
    if not train:
        raise DataError("Naive Bayes needs at least one training sequence")
    config = train[0].config
    if any(seq.config != config for seq in train):
        raise DataError("training sequences use different delay windows")
    counts = np.zeros(config.width, dtype=np.int64)
    for seq in train:
        counts += np.bincount(seq.columns, minlength=config.width)
    return NaiveBayesModel(counts=[int(c) for c in counts], config=config)
