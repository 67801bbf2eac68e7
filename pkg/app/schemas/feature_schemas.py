from enum import Enum
from typing import Optional
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

# Tolerance on row sums of a delay distribution (double precision)
ROW_SUM_TOL = 1e-9


class FeatureKind(str, Enum):
    """Feature sets the autoregressive model can be trained on."""
    DISCRETE_DELAY = "discrete_delay"
    DISTRIBUTION = "distribution"
    ACTIVATION_PCA = "activation_pca"
    CONCAT_AV = "concat_av"
    RASTER_CODES = "raster_codes"


class ActivationSource(str, Enum):
    AUDIO_VISUAL = "audio_visual"
    VISUAL_ONLY = "visual_only"


def frozen_array(value, dtype=np.float64, ndim: Optional[int] = None) -> np.ndarray:
    """
    Copies `value` into a read-only numpy array.

    - **Parameters**:
        - `value`: Array-like input.
        - `dtype`: Target dtype.
        - `ndim`: Required number of dimensions, if any.

    - **Returns**:
        - A new, non-writeable array.

    - **Raises**:
        - ValueError: If the dimensionality does not match.
    """
    array = np.array(value, dtype=dtype, copy=True)
    if ndim is not None and array.ndim != ndim:
        raise ValueError(f"expected a {ndim}-D array, got shape {array.shape}")
    array.setflags(write=False)
    return array


def first_non_finite(values: np.ndarray) -> Optional[tuple[int, ...]]:
    """Index of the first non-finite entry, or None."""
    bad = np.argwhere(~np.isfinite(values))
    return tuple(int(i) for i in bad[0]) if len(bad) else None


class DelayWindowConfig(BaseModel):
    """
    Delay window of the synchronization features.

    - **Attributes**:
        - `tau`: Maximum offset in frames; candidate offsets are -tau..+tau.
        - `fps`: Video frame rate.
    """
    tau: int = Field(default=15, ge=1)
    fps: int = Field(default=25, gt=0)

    model_config = ConfigDict(frozen=True)

    @property
    def width(self) -> int:
        """Window width W = 2*tau + 1."""
        return 2 * self.tau + 1


class _ArrayModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


class AffinitySequence(_ArrayModel):
    """
    Raw (pre-softmax) audio-visual affinities over the delay window, one row per frame.
    Column j holds offset j - tau.
    """
    values: np.ndarray
    config: DelayWindowConfig = DelayWindowConfig()

    @field_validator("values", mode="before")
    @classmethod
    def _to_array(cls, value):
        return frozen_array(value, ndim=2)

    @model_validator(mode="after")
    def _check(self):
        t, w = self.values.shape
        if t < 1:
            raise ValueError("affinity sequence needs at least one frame")
        if w != self.config.width:
            raise ValueError(f"affinity rows have width {w}, expected {self.config.width} for tau={self.config.tau}")
        bad = first_non_finite(self.values)
        if bad is not None:
            raise ValueError(f"non-finite affinity at row {bad[0]}, column {bad[1]}")
        return self

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


class DelayDistributionSequence(_ArrayModel):
    """
    Per-frame probability distribution over the 2*tau+1 candidate delays.
    """
    rows: np.ndarray
    config: DelayWindowConfig = DelayWindowConfig()

    @field_validator("rows", mode="before")
    @classmethod
    def _to_array(cls, value):
        return frozen_array(value, ndim=2)

    @model_validator(mode="after")
    def _check(self):
        t, w = self.rows.shape
        if t < 1:
            raise ValueError("distribution sequence needs at least one frame")
        if w != self.config.width:
            raise ValueError(f"distribution rows have width {w}, expected {self.config.width}")
        if not np.all(np.isfinite(self.rows)) or self.rows.min() < 0.0 or self.rows.max() > 1.0:
            raise ValueError("distribution entries must lie in [0, 1]")
        sums = self.rows.sum(axis=1)
        worst = int(np.argmax(np.abs(sums - 1.0)))
        if abs(sums[worst] - 1.0) > ROW_SUM_TOL:
            raise ValueError(f"distribution row {worst} sums to {sums[worst]!r}, not 1")
        return self

    @property
    def n_frames(self) -> int:
        return self.rows.shape[0]


class DiscreteDelaySequence(_ArrayModel):
    """
    Per-frame most likely offset, in [-tau, tau].
    """
    delays: np.ndarray
    config: DelayWindowConfig = DelayWindowConfig()

    @field_validator("delays", mode="before")
    @classmethod
    def _to_array(cls, value):
        return frozen_array(value, dtype=np.int64, ndim=1)

    @model_validator(mode="after")
    def _check(self):
        if len(self.delays) < 1:
            raise ValueError("delay sequence needs at least one frame")
        tau = self.config.tau
        out = np.flatnonzero((self.delays < -tau) | (self.delays > tau))
        if len(out):
            raise ValueError(f"delay {int(self.delays[out[0]])} at frame {int(out[0])} outside [-{tau}, {tau}]")
        return self

    @property
    def n_frames(self) -> int:
        return len(self.delays)

    @property
    def columns(self) -> np.ndarray:
        """Column index of each delay in the window (offset + tau)."""
        return self.delays + self.config.tau


class ActivationSequence(_ArrayModel):
    """
    Per-frame activations of the synchronization network, ingested as data.
    """
    values: np.ndarray
    source: ActivationSource = ActivationSource.AUDIO_VISUAL

    @field_validator("values", mode="before")
    @classmethod
    def _to_array(cls, value):
        return frozen_array(value, ndim=2)

    @model_validator(mode="after")
    def _check(self):
        if self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise ValueError(f"activation matrix must be non-empty, got shape {self.values.shape}")
        bad = first_non_finite(self.values)
        if bad is not None:
            raise ValueError(f"non-finite activation at row {bad[0]}, column {bad[1]}")
        return self

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


class PcaModel(_ArrayModel):
    """
    Principal-component projection of activations.

    - **Attributes**:
        - `mean`: Frame-wise mean, length d_act.
        - `components`: D x d_act matrix with orthonormal rows, largest-magnitude entry positive.
        - `eigenvalues`: The D leading covariance eigenvalues, descending.
        - `total_variance`: Trace of the covariance (sum of all eigenvalues).
    """
    mean: np.ndarray
    components: np.ndarray
    eigenvalues: np.ndarray
    total_variance: float

    @field_validator("mean", "eigenvalues", mode="before")
    @classmethod
    def _to_vector(cls, value):
        return frozen_array(value, ndim=1)

    @field_validator("components", mode="before")
    @classmethod
    def _to_matrix(cls, value):
        return frozen_array(value, ndim=2)

    @model_validator(mode="after")
    def _check(self):
        d, d_act = self.components.shape
        if d_act != len(self.mean):
            raise ValueError(f"components have {d_act} columns but the mean has {len(self.mean)} entries")
        if d > d_act:
            raise ValueError(f"D={d} exceeds the activation dimension {d_act}")
        if len(self.eigenvalues) != d:
            raise ValueError("one eigenvalue per component is required")
        gram = self.components @ self.components.T
        if not np.allclose(gram, np.eye(d), atol=1e-6):
            raise ValueError("PCA components are not orthonormal")
        return self

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    @property
    def explained_variance_ratio(self) -> float:
        if self.total_variance <= 0:
            return 1.0
        return float(self.eigenvalues.sum() / self.total_variance)


class Codebook(_ArrayModel):
    """
    Scalar quantizer: sorted k-means centers.
    """
    centers: np.ndarray

    @field_validator("centers", mode="before")
    @classmethod
    def _to_array(cls, value):
        return frozen_array(value, ndim=1)

    @model_validator(mode="after")
    def _check(self):
        if len(self.centers) < 2:
            raise ValueError("a codebook needs at least 2 centers")
        if not np.all(np.diff(self.centers) > 0):
            raise ValueError("codebook centers must be strictly increasing")
        return self

    @property
    def k(self) -> int:
        return len(self.centers)


class FeatureSequence(_ArrayModel):
    """
    Generic per-frame feature matrix fed to the autoregressive model.

    - **Attributes**:
        - `kind`: Which feature set the rows hold.
        - `data`: T x d matrix (float), or T x W integer code grid for `raster_codes`.
        - `config`: Delay window the features were built with.
    """
    kind: FeatureKind
    data: np.ndarray
    config: DelayWindowConfig = DelayWindowConfig()

    @model_validator(mode="before")
    @classmethod
    def _to_array(cls, values):
        if isinstance(values, dict) and "data" in values:
            kind = FeatureKind(values.get("kind"))
            dtype = np.int64 if kind is FeatureKind.RASTER_CODES else np.float64
            values = {**values, "data": frozen_array(values["data"], dtype=dtype, ndim=2)}
        return values

    @model_validator(mode="after")
    def _check(self):
        t, d = self.data.shape
        w = self.config.width
        if t < 1:
            raise ValueError("feature sequence needs at least one frame")
        if self.kind is FeatureKind.RASTER_CODES:
            if d != w:
                raise ValueError(f"raster code grid has width {d}, expected {w}")
            if self.data.min() < 0:
                raise ValueError("raster codes must be non-negative")
            return self
        bad = first_non_finite(self.data)
        if bad is not None:
            raise ValueError(f"non-finite feature at row {bad[0]}, column {bad[1]}")
        if self.kind is FeatureKind.DISTRIBUTION:
            if d != w or np.any(np.abs(self.data.sum(axis=1) - 1.0) > ROW_SUM_TOL):
                raise ValueError("distribution features need width W and rows summing to 1")
        elif self.kind is FeatureKind.DISCRETE_DELAY:
            if d != w or not np.all((self.data == 0) | (self.data == 1)) or not np.all(self.data.sum(axis=1) == 1):
                raise ValueError("discrete delay features must be one-hot rows of width W")
        elif self.kind is FeatureKind.CONCAT_AV and d <= w:
            raise ValueError(f"concatenated features need more than W={w} columns")
        return self

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def window(self, start: int, stop: int) -> "FeatureSequence":
        """Frames [start, stop) as a new sequence."""
        return FeatureSequence(kind=self.kind, data=self.data[start:stop], config=self.config)


class InfoNceResult(BaseModel):
    """
    Synchronization InfoNCE diagnostic.

    - **Attributes**:
        - `loss`: Mean negative log probability of the zero-offset column.
        - `clamped`: Whether any probability was clamped at epsilon.
        - `n_clamped`: Number of clamped frames.
    """
    loss: float
    clamped: bool = False
    n_clamped: int = 0
