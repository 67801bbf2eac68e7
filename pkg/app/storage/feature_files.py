"""
Text container for feature sequences ("avsf v1").

    # avsf v1
    # kind=<affinity|distribution|discrete|activation|raster>
    # tau=<int>
    # fps=<int>
    # dim=<int>
    [# source=<audio_visual|visual_only>]    (activation files)
    v,v,v,...                                (T rows of `dim` comma-separated values)

Reals are printed with 9 significant digits, which round-trips through load and save.
"""
from enum import Enum
from pathlib import Path
from typing import Optional, Union
import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator
from app.schemas.feature_schemas import (
    ROW_SUM_TOL,
    ActivationSequence,
    ActivationSource,
    AffinitySequence,
    DelayDistributionSequence,
    DelayWindowConfig,
    DiscreteDelaySequence,
    FeatureKind,
    FeatureSequence,
    frozen_array,
)
from app.utils.errors import DataError

MAGIC = "# avsf v1"

# Distribution rows whose sum is off by this much or more are rejected on load
RENORMALIZE_TOL = 1e-6


class FileKind(str, Enum):
    AFFINITY = "affinity"
    DISTRIBUTION = "distribution"
    DISCRETE = "discrete"
    ACTIVATION = "activation"
    RASTER = "raster"


INTEGER_KINDS = {FileKind.DISCRETE, FileKind.RASTER}


class FeatureFile(BaseModel):
    """
    Content of one feature file.

    - **Attributes**:
        - `kind`: What the rows hold.
        - `window`: Delay window (tau, fps).
        - `values`: T x dim matrix (integer for discrete/raster files).
        - `source`: Activation source, activation files only.
    """
    kind: FileKind
    window: DelayWindowConfig = DelayWindowConfig()
    values: np.ndarray
    source: Optional[ActivationSource] = None

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @field_validator("values", mode="before")
    @classmethod
    def _to_array(cls, value):
        return frozen_array(value, dtype=np.float64, ndim=2)

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def _format_row(row: np.ndarray, integer: bool) -> str:
    if integer:
        return ",".join(str(int(v)) for v in row)
    return ",".join(f"{v:.9g}" for v in row)


# Function to write a feature file
def save_feature_file(path: Union[str, Path], content: FeatureFile) -> None:
    """
    Writes `content` in the avsf v1 text format.

    - **Parameters**:
        - `path`: Destination file.
        - `content`: The feature file content.
    """
    lines = [
        MAGIC,
        f"# kind={content.kind.value}",
        f"# tau={content.window.tau}",
        f"# fps={content.window.fps}",
        f"# dim={content.dim}",
    ]
    if content.source is not None:
        lines.append(f"# source={content.source.value}")
    integer = content.kind in INTEGER_KINDS
    lines.extend(_format_row(row, integer) for row in content.values)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_header(path: Path, lines: list[str]) -> tuple[dict[str, str], int]:
    if not lines or lines[0].strip() != MAGIC:
        raise DataError(f"{path}: missing '{MAGIC}' header")
    header: dict[str, str] = {}
    index = 1
    while index < len(lines) and lines[index].startswith("#"):
        key, sep, value = lines[index][1:].strip().partition("=")
        if not sep:
            raise DataError(f"{path}:{index + 1}: malformed header line {lines[index]!r}")
        header[key.strip()] = value.strip()
        index += 1
    for key in ("kind", "tau", "fps", "dim"):
        if key not in header:
            raise DataError(f"{path}: header is missing '{key}'")
    return header, index


def _check_distribution(path: Path, values: np.ndarray) -> None:
    if values.min() < 0:
        raise DataError(f"{path}: distribution has negative entries")
    sums = values.sum(axis=1)
    off = np.abs(sums - 1.0)
    worst = int(np.argmax(off))
    if off[worst] >= RENORMALIZE_TOL:
        raise DataError(f"{path}: distribution row {worst} sums to {sums[worst]!r}")


# Function to read a feature file
def load_feature_file(path: Union[str, Path]) -> FeatureFile:
    """
    Reads and validates an avsf v1 file.

    - **Parameters**:
        - `path`: File to read.

    - **Returns**:
        - The file content, values exactly as printed. Distribution rows must sum to 1 within 1e-6.

    - **Raises**:
        - DataError: If the file is malformed or violates its kind's constraints.
    """
    path = Path(path)
    lines = [line for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
    header, start = _parse_header(path, lines)
    try:
        kind = FileKind(header["kind"])
        window = DelayWindowConfig(tau=int(header["tau"]), fps=int(header["fps"]))
        dim = int(header["dim"])
        source = ActivationSource(header["source"]) if "source" in header else None
    except (ValueError, ValidationError) as exc:
        raise DataError(f"{path}: invalid header: {exc}") from exc

    rows = []
    for number, line in enumerate(lines[start:], start=start + 1):
        fields = line.split(",")
        if len(fields) != dim:
            raise DataError(f"{path}:{number}: expected {dim} values, got {len(fields)}")
        try:
            rows.append([float(v) for v in fields])
        except ValueError as exc:
            raise DataError(f"{path}:{number}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: no data rows")
    values = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        row, col = np.argwhere(~np.isfinite(values))[0]
        raise DataError(f"{path}: non-finite value at row {row}, column {col}")

    if kind in (FileKind.AFFINITY, FileKind.DISTRIBUTION, FileKind.RASTER) and dim != window.width:
        raise DataError(f"{path}: {kind.value} rows need dim={window.width} for tau={window.tau}, got {dim}")
    if kind in INTEGER_KINDS and not np.all(values == np.rint(values)):
        raise DataError(f"{path}: {kind.value} files hold integers")
    if kind is FileKind.DISCRETE and dim != 1:
        raise DataError(f"{path}: discrete files hold one delay per row")
    if kind is FileKind.DISTRIBUTION:
        _check_distribution(path, values)
    if kind is FileKind.ACTIVATION and source is None:
        source = ActivationSource.AUDIO_VISUAL
    return FeatureFile(kind=kind, window=window, values=values, source=source)


def feature_file_from(
    item: Union[AffinitySequence, DelayDistributionSequence, DiscreteDelaySequence, ActivationSequence, FeatureSequence],
    window: DelayWindowConfig = DelayWindowConfig(),
) -> FeatureFile:
    """
    Wraps a sequence for saving. Activation sequences carry no delay window, so `window` is used.
    """
    if isinstance(item, AffinitySequence):
        return FeatureFile(kind=FileKind.AFFINITY, window=item.config, values=item.values)
    if isinstance(item, DelayDistributionSequence):
        return FeatureFile(kind=FileKind.DISTRIBUTION, window=item.config, values=item.rows)
    if isinstance(item, DiscreteDelaySequence):
        return FeatureFile(kind=FileKind.DISCRETE, window=item.config, values=item.delays[:, None])
    if isinstance(item, ActivationSequence):
        return FeatureFile(kind=FileKind.ACTIVATION, window=window, values=item.values, source=item.source)
    if isinstance(item, FeatureSequence) and item.kind is FeatureKind.RASTER_CODES:
        return FeatureFile(kind=FileKind.RASTER, window=item.config, values=item.data)
    raise DataError(f"cannot store {type(item).__name__} as a feature file")


def _wrap(path: Path, build):
    try:
        return build()
    except ValidationError as exc:
        raise DataError(f"{path}: {exc}") from exc


def as_affinities(path: Path, content: FeatureFile) -> AffinitySequence:
    return _wrap(path, lambda: AffinitySequence(values=content.values, config=content.window))


def as_distribution(path: Path, content: FeatureFile) -> DelayDistributionSequence:
    """Distribution rows, renormalized when 9-digit printing left them off by more than 1e-9."""
    rows = content.values
    sums = rows.sum(axis=1, keepdims=True)
    if np.any(np.abs(sums - 1.0) > ROW_SUM_TOL):
        rows = rows / sums
    return _wrap(path, lambda: DelayDistributionSequence(rows=rows, config=content.window))


def as_delays(path: Path, content: FeatureFile) -> DiscreteDelaySequence:
    return _wrap(path, lambda: DiscreteDelaySequence(delays=content.values[:, 0], config=content.window))


def as_activations(path: Path, content: FeatureFile) -> ActivationSequence:
    return _wrap(path, lambda: ActivationSequence(values=content.values, source=content.source))


def as_codes(path: Path, content: FeatureFile) -> FeatureSequence:
    return _wrap(path, lambda: FeatureSequence(
        kind=FeatureKind.RASTER_CODES, data=content.values, config=content.window
    ))
