from enum import Enum
from fractions import Fraction
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from app.schemas.feature_schemas import DelayWindowConfig, FeatureKind


class HeadKind(str, Enum):
    """Output head of the decoder."""
    SOFTMAX = "softmax"
    SIGMOID = "sigmoid"
    LINEAR = "linear"
    RASTER_CODEBOOK = "raster_codebook"


class LossKind(str, Enum):
    CE_DISCRETE = "ce_discrete"
    SOFT_CE = "soft_ce"
    BCE = "bce"
    MSE = "mse"
    RASTER_CE = "raster_ce"


# Feature sets each loss can be trained on
LOSS_FEATURES: dict[LossKind, frozenset[FeatureKind]] = {
    LossKind.CE_DISCRETE: frozenset({FeatureKind.DISCRETE_DELAY}),
    LossKind.SOFT_CE: frozenset({FeatureKind.DISTRIBUTION}),
    LossKind.BCE: frozenset({FeatureKind.DISTRIBUTION}),
    LossKind.MSE: frozenset({FeatureKind.ACTIVATION_PCA, FeatureKind.CONCAT_AV}),
    LossKind.RASTER_CE: frozenset({FeatureKind.RASTER_CODES}),
}

# Output head each loss needs
LOSS_HEADS: dict[LossKind, HeadKind] = {
    LossKind.CE_DISCRETE: HeadKind.SOFTMAX,
    LossKind.SOFT_CE: HeadKind.SOFTMAX,
    LossKind.BCE: HeadKind.SIGMOID,
    LossKind.MSE: HeadKind.LINEAR,
    LossKind.RASTER_CE: HeadKind.RASTER_CODEBOOK,
}


class ArConfig(BaseModel):
    """
    Configuration of the autoregressive Transformer decoder.

    - **Attributes**:
        - `n_blocks`, `n_heads`, `d_model`: Decoder depth, attention heads and channel width.
        - `d_in`, `d_out`: Feature width in and out. For the raster head `d_in` is the grid
          width W (cells per frame) and `d_out` is the codebook size.
        - `n_max`: Maximum sequence length in frames.
        - `dropout_rate`: Dropout applied in training mode.
        - `head`: Output head.
        - `raster_k`: Codebook size for the raster head.
    """
    n_blocks: int = Field(default=2, ge=1)
    n_heads: int = Field(default=16, ge=1)
    d_model: int = Field(default=256, ge=1)
    d_in: int = Field(ge=1)
    d_out: int = Field(ge=1)
    n_max: int = Field(default=50, ge=2)
    dropout_rate: float = Field(default=0.1, ge=0.0, lt=1.0)
    head: HeadKind
    raster_k: int = Field(default=8, ge=2)

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.head is HeadKind.RASTER_CODEBOOK and self.d_out != self.raster_k:
            raise ValueError(f"raster head needs d_out == raster_k ({self.raster_k}), got {self.d_out}")
        return self

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def n_positions(self) -> int:
        """Positional table length: frames, or frames times cells for the raster head."""
        if self.head is HeadKind.RASTER_CODEBOOK:
            return self.n_max * self.d_in
        return self.n_max


class TrainConfig(BaseModel):
    """
    Optimization recipe of the autoregressive model.

    - **Attributes**:
        - `lr_max`: Peak learning rate reached after warm-up.
        - `weight_decay`: Decoupled (AdamW) weight decay.
        - `batch_size`: Sequences per mini-batch.
        - `warmup_steps`, `total_steps`: Linear warm-up then cosine decay to 0 at `total_steps`.
        - `adam_beta1`, `adam_beta2`, `adam_eps`: Adam hyperparameters.
        - `grad_clip`: Global gradient-norm clip.
        - `seed`: Seeds initialization, shuffling and dropout.
        - `loss`: Loss variant.
    """
    lr_max: float = Field(default=1e-3, gt=0)
    weight_decay: float = Field(default=1e-6, ge=0)
    batch_size: int = Field(default=16, ge=1)
    warmup_steps: int = Field(default=500, ge=1)
    total_steps: int = Field(ge=0)
    adam_beta1: float = Field(default=0.9, ge=0, lt=1)
    adam_beta2: float = Field(default=0.999, ge=0, lt=1)
    adam_eps: float = Field(default=1e-8, gt=0)
    grad_clip: float = Field(default=1.0, gt=0)
    seed: int = 0
    loss: LossKind

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check(self):
        # total_steps == 0 means "no training": initial parameters are returned
        if self.total_steps and not 0 < self.warmup_steps < self.total_steps:
            raise ValueError(
                f"warmup_steps ({self.warmup_steps}) must be below total_steps ({self.total_steps})"
            )
        return self


class TraceRow(BaseModel):
    step: int
    lr: float
    loss: float


class NaiveBayesModel(BaseModel):
    """
    Frame-independent categorical over the W delays, with add-1 smoothing.

    - **Attributes**:
        - `counts`: Pooled training counts per offset column.
        - `config`: Delay window.
    """
    counts: list[int]
    config: DelayWindowConfig = DelayWindowConfig()

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check(self):
        if len(self.counts) != self.config.width:
            raise ValueError(f"expected {self.config.width} counts, got {len(self.counts)}")
        if any(c < 0 for c in self.counts):
            raise ValueError("counts must be non-negative")
        return self

    def probabilities_exact(self) -> list[Fraction]:
        total = sum(self.counts) + len(self.counts)
        return [Fraction(c + 1, total) for c in self.counts]

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([float(p) for p in self.probabilities_exact()])
