from enum import Enum
from pathlib import Path
from typing import Any, Literal, Optional
from pydantic import BaseModel, ConfigDict, Field, model_validator
from app.schemas.feature_schemas import DelayWindowConfig, FeatureKind
from app.schemas.model_schemas import ArConfig, TrainConfig

CHECKPOINT_FORMAT = "syncwatch-ckpt-1"


class FakeMode(str, Enum):
    DRIFT = "drift"
    FLAT = "flat"
    INTERVAL = "interval"


class GenConfig(BaseModel):
    """
    Synthetic corpus parameters. All numeric values are calibration knobs.

    - **Attributes**:
        - `tau`, `fps`: Delay window.
        - `frames`: Frames per generated video.
        - `seed`: Corpus seed.
        - `offset_min`, `offset_max`: Range of the global offset of real videos.
        - `peak_height_mean`, `peak_height_sd`: Affinity peak height at the true offset.
        - `noise_sd`: Background affinity noise.
        - `ar_rho`: AR(1) smoothing of rows across time.
        - `drift_step_sd`: Random-walk step of the peak column in drift mode (frames).
        - `flat_prob`, `flat_span`, `flat_peak_height`: Flat mode spans and their residual peak.
        - `interval_length`: Manipulated span of interval mode.
        - `d_act`, `activation_noise_sd`, `activation_map_seed`: Synthetic activations.
    """
    tau: int = Field(default=15, ge=1)
    fps: int = Field(default=25, gt=0)
    frames: int = Field(default=120, ge=2)
    seed: int = Field(default=0, ge=0)
    offset_min: int = -2
    offset_max: int = 2
    peak_height_mean: float = 4.0
    peak_height_sd: float = Field(default=0.5, ge=0)
    noise_sd: float = Field(default=0.3, ge=0)
    ar_rho: float = Field(default=0.9, ge=0, lt=1)
    drift_step_sd: float = Field(default=1.0, ge=0)
    flat_prob: float = Field(default=0.3, ge=0, le=1)
    flat_span: int = Field(default=10, ge=1)
    flat_peak_height: float = 0.5
    interval_length: int = Field(default=9, ge=1)
    d_act: int = Field(default=128, ge=2)
    activation_noise_sd: float = Field(default=0.1, ge=0)
    activation_map_seed: int = 1234

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check(self):
        if self.frames <= 2 * self.tau:
            raise ValueError(f"frames ({self.frames}) must exceed 2*tau ({2 * self.tau})")
        if not -self.tau <= self.offset_min <= self.offset_max <= self.tau:
            raise ValueError("offset range must lie inside [-tau, tau] and be ordered")
        if self.interval_length > self.frames:
            raise ValueError("interval_length cannot exceed frames")
        return self

    @property
    def window(self) -> DelayWindowConfig:
        return DelayWindowConfig(tau=self.tau, fps=self.fps)


class ManifestRecord(BaseModel):
    """
    One entry of a dataset manifest.

    - **Attributes**:
        - `path`: Feature file, relative to the manifest.
        - `label`: 0 real, 1 fake.
        - `category`: Optional manipulation category tag.
        - `interval`: Optional manipulated frames [start, end).
        - `activations`: Optional activation file of the same video.
    """
    path: str
    label: Literal[0, 1]
    category: Optional[str] = None
    interval: Optional[tuple[int, int]] = None
    activations: Optional[str] = None

    @model_validator(mode="after")
    def _check(self):
        if self.interval is not None:
            start, end = self.interval
            if not 0 <= start < end:
                raise ValueError(f"interval {list(self.interval)} must satisfy 0 <= start < end")
        return self


class Manifest(BaseModel):
    """Records plus the directory their paths are relative to."""
    records: list[ManifestRecord]
    root: Path

    def resolve(self, relative: str) -> Path:
        return (self.root / relative).resolve()


class TensorIndexEntry(BaseModel):
    name: str
    shape: list[int]
    offset_elems: int


class CheckpointHeader(BaseModel):
    """
    JSON header line of a checkpoint.

    `preprocessing` holds what scoring needs to rebuild features: the delay window, and the
    fitted PCA / codebook when the feature set uses them.
    """
    format: str = CHECKPOINT_FORMAT
    model_cfg: ArConfig
    train_cfg: TrainConfig
    feature_kind: FeatureKind
    tensors: list[TensorIndexEntry]
    preprocessing: dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check(self):
        if self.format != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {self.format!r}")
        return self

    @property
    def n_elems(self) -> int:
        total = 0
        for entry in self.tensors:
            size = 1
            for dim in entry.shape:
                size *= dim
            total += size
        return total
