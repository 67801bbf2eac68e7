"""
Glue between feature files and feature sets: loads a video's files, fits the preprocessing
(PCA, codebook) on the training split and builds the FeatureSequence a model consumes.
"""
import logging
from pathlib import Path
from typing import Any, Optional, Sequence
import numpy as np
from pydantic import BaseModel, ConfigDict
from app.schemas.feature_schemas import (
    ActivationSequence,
    Codebook,
    DelayDistributionSequence,
    DelayWindowConfig,
    DiscreteDelaySequence,
    FeatureKind,
    FeatureSequence,
    PcaModel,
)
from app.services.sync_features import (
    argmax_delays,
    concat_features,
    discrete_features,
    distribution_features,
    kmeans_fit,
    normalize_affinities,
    pca_fit,
    pca_project,
    quantize_grid,
)
from app.storage.feature_files import (
    FileKind,
    as_activations,
    as_affinities,
    as_codes,
    as_delays,
    as_distribution,
    load_feature_file,
)
from app.utils.errors import DataError, UsageError

logger = logging.getLogger(__name__)

# Values drawn from the training distributions to fit the codebook
CODEBOOK_SAMPLE = 100_000

# Which file kinds can feed each feature set
_NEEDS = {
    FeatureKind.DISCRETE_DELAY: "a delay, distribution or affinity file",
    FeatureKind.DISTRIBUTION: "a distribution or affinity file",
    FeatureKind.ACTIVATION_PCA: "an activation file",
    FeatureKind.CONCAT_AV: "a distribution or affinity file plus an activation file",
    FeatureKind.RASTER_CODES: "a raster, distribution or affinity file",
}


class VideoInputs(BaseModel):
    """
    Everything loaded for one video; unset fields were not provided.
    """
    path: Path
    file_kind: FileKind
    window: DelayWindowConfig
    distribution: Optional[DelayDistributionSequence] = None
    delays: Optional[DiscreteDelaySequence] = None
    activations: Optional[ActivationSequence] = None
    codes: Optional[FeatureSequence] = None

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


class Preprocessing(BaseModel):
    """
    Fitted preprocessing stored in the checkpoint header.

    - **Attributes**:
        - `window`: Delay window of the training data.
        - `pca`: PCA of the activation feature sets.
        - `codebook`: Quantizer of the raster feature set.
        - `fit_split`: Split the PCA / codebook were fitted on.
    """
    window: DelayWindowConfig = DelayWindowConfig()
    pca: Optional[PcaModel] = None
    codebook: Optional[Codebook] = None
    fit_split: str = "ar_train"

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    def to_dict(self) -> dict[str, Any]:
        payload: dict[str, Any] = {"window": self.window.model_dump(), "fit_split": self.fit_split}
        if self.pca is not None:
            payload["pca"] = {
                "mean": self.pca.mean.tolist(),
                "components": self.pca.components.tolist(),
                "eigenvalues": self.pca.eigenvalues.tolist(),
                "total_variance": self.pca.total_variance,
            }
        if self.codebook is not None:
            payload["codebook"] = {"centers": self.codebook.centers.tolist()}
        return payload

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "Preprocessing":
        return cls(
            window=DelayWindowConfig(**payload.get("window", {})),
            pca=PcaModel(**payload["pca"]) if "pca" in payload else None,
            codebook=Codebook(**payload["codebook"]) if "codebook" in payload else None,
            fit_split=payload.get("fit_split", "ar_train"),
        )


# Function to load the files of one video
def load_video(path: Path, activations: Optional[Path] = None) -> VideoInputs:
    """
    Loads a video's feature file and, optionally, its activation file.

    - **Parameters**:
        - `path`: Main feature file (any avsf kind).
        - `activations`: Separate activation file of the same video.

    - **Returns**:
        - The loaded inputs; affinities are normalized into distributions.

    - **Raises**:
        - DataError: If a file is invalid or the two files disagree on frame count.
    """
    content = load_feature_file(path)
    fields: dict[str, Any] = {}
    if content.kind is FileKind.AFFINITY:
        fields["distribution"] = normalize_affinities(as_affinities(path, content))
    elif content.kind is FileKind.DISTRIBUTION:
        fields["distribution"] = as_distribution(path, content)
    elif content.kind is FileKind.DISCRETE:
        fields["delays"] = as_delays(path, content)
    elif content.kind is FileKind.RASTER:
        fields["codes"] = as_codes(path, content)
    else:
        fields["activations"] = as_activations(path, content)

    if activations is not None:
        extra = load_feature_file(activations)
        if extra.kind is not FileKind.ACTIVATION:
            raise DataError(f"{activations}: expected an activation file, got {extra.kind.value}")
        acts = as_activations(activations, extra)
        if acts.n_frames != content.values.shape[0]:
            raise DataError(
                f"{activations} has {acts.n_frames} frames but {path} has {content.values.shape[0]}"
            )
        fields["activations"] = acts
    return VideoInputs(path=path, file_kind=content.kind, window=content.window, **fields)


def video_delays(video: VideoInputs) -> DiscreteDelaySequence:
    """Discrete delays of a video: given directly, or the argmax of its distributions."""
    if video.delays is not None:
        return video.delays
    if video.distribution is not None:
        return argmax_delays(video.distribution)
    raise UsageError(f"{video.path}: delays need a delay, distribution or affinity file, got {video.file_kind.value}")


def _missing(kind: FeatureKind, video: VideoInputs) -> UsageError:
    return UsageError(
        f"feature set {kind.value} needs {_NEEDS[kind]}, but {video.path} provides {video.file_kind.value}"
        + (" with activations" if video.activations is not None and video.file_kind is not FileKind.ACTIVATION else "")
    )


# Function to fit PCA / codebook on the training videos
def fit_preprocessing(kind: FeatureKind, videos: Sequence[VideoInputs], pca_dim: int = 31,
                      codebook_k: int = 8, seed: int = 0) -> Preprocessing:
    """
    Fits what `kind` needs on the autoregressive training split.

    - **Parameters**:
        - `kind`: Feature set.
        - `videos`: Training videos (real only).
        - `pca_dim`: PCA dimension D for activation feature sets.
        - `codebook_k`: Codebook size K for the raster feature set.
        - `seed`: k-means seed.
    """
    if not videos:
        raise DataError("no training videos")
    window = videos[0].window
    if any(v.window != window for v in videos):
        raise DataError("training videos use different delay windows")

    pca = codebook = None
    if kind in (FeatureKind.ACTIVATION_PCA, FeatureKind.CONCAT_AV):
        missing = [v for v in videos if v.activations is None]
        if missing:
            raise _missing(kind, missing[0])
        pca = pca_fit([v.activations for v in videos], pca_dim)
        logger.info("PCA D=%d keeps %.1f%% of the activation variance", pca_dim, 100 * pca.explained_variance_ratio)
    if kind is FeatureKind.RASTER_CODES and any(v.codes is None for v in videos):
        missing = [v for v in videos if v.distribution is None and v.codes is None]
        if missing:
            raise _missing(kind, missing[0])
        values = np.concatenate([v.distribution.rows.ravel() for v in videos if v.distribution is not None])
        if len(values) > CODEBOOK_SAMPLE:
            values = np.random.default_rng(seed).choice(values, CODEBOOK_SAMPLE, replace=False)
        codebook = kmeans_fit(values, codebook_k, seed)
        logger.info("Codebook K=%d: %s", codebook_k, np.array2string(codebook.centers, precision=4))
    return Preprocessing(window=window, pca=pca, codebook=codebook)


# Function to build the model input of one video
def build_features(kind: FeatureKind, video: VideoInputs, prep: Preprocessing) -> FeatureSequence:
    """
    The FeatureSequence of `kind` for one video.

    - **Raises**:
        - UsageError: If the video's files cannot provide `kind` (names both kinds).
        - DataError: If the video's delay window differs from the preprocessing's.
    """
    if video.window.width != prep.window.width and video.file_kind is not FileKind.ACTIVATION:
        raise DataError(f"{video.path} uses tau={video.window.tau}, the model tau={prep.window.tau}")

    if kind is FeatureKind.DISCRETE_DELAY:
        if video.delays is None and video.distribution is None:
            raise _missing(kind, video)
        return discrete_features(video_delays(video))
    if kind is FeatureKind.DISTRIBUTION:
        if video.distribution is None:
            raise _missing(kind, video)
        return distribution_features(video.distribution)
    if kind is FeatureKind.ACTIVATION_PCA:
        if video.activations is None or prep.pca is None:
            raise _missing(kind, video)
        return pca_project(prep.pca, video.activations, prep.window)
    if kind is FeatureKind.CONCAT_AV:
        if video.distribution is None or video.activations is None or prep.pca is None:
            raise _missing(kind, video)
        return concat_features(video.distribution, pca_project(prep.pca, video.activations, prep.window))
    if video.codes is not None:
        return video.codes
    if video.distribution is None or prep.codebook is None:
        raise _missing(kind, video)
    return quantize_grid(video.distribution, prep.codebook)
