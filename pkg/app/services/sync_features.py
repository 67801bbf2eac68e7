"""
Feature sets built from audio-visual affinities: delay distributions, discrete delays,
PCA-projected activations, their concatenation and k-means-quantized grids.
"""
import logging
from typing import Iterable, Sequence
import numpy as np
from app.schemas.feature_schemas import (
    ActivationSequence,
    AffinitySequence,
    Codebook,
    DelayDistributionSequence,
    DelayWindowConfig,
    DiscreteDelaySequence,
    FeatureKind,
    FeatureSequence,
    InfoNceResult,
    PcaModel,
    first_non_finite,
)
from app.utils.errors import DataError, FitError

logger = logging.getLogger(__name__)

# Probability clamp applied before every logarithm
EPS = 1e-12

KMEANS_RESTARTS = 50
KMEANS_MAX_ITER = 300


# Function to turn affinities into per-frame delay distributions
def normalize_affinities(aff: AffinitySequence) -> DelayDistributionSequence:
    """
    Row-wise softmax of the affinity window.

    - **Parameters**:
        - `aff`: Affinities, T x W.

    - **Returns**:
        - The delay distribution sequence S (rows sum to 1).

    - **Raises**:
        - DataError: If an entry is not finite (names the row and column).
    """
    values = np.asarray(aff.values, dtype=np.float64)
    bad = first_non_finite(values)
    if bad is not None:
        raise DataError(f"non-finite affinity at row {bad[0]}, column {bad[1]}")
    shifted = values - values.max(axis=1, keepdims=True)
    weights = np.exp(shifted)
    rows = weights / weights.sum(axis=1, keepdims=True)
    return DelayDistributionSequence(rows=rows, config=aff.config)


# Function to compute the synchronization InfoNCE diagnostic
def sync_infonce_loss(dist: DelayDistributionSequence) -> InfoNceResult:
    """
    Mean negative log probability of the zero-offset column. Diagnostic only.

    - **Parameters**:
        - `dist`: Delay distributions.

    - **Returns**:
        - The loss and whether any zero probability had to be clamped.
    """
    center = dist.rows[:, dist.config.tau]
    clamped = center < EPS
    loss = float(-np.mean(np.log(np.maximum(center, EPS))))
    return InfoNceResult(loss=loss, clamped=bool(clamped.any()), n_clamped=int(clamped.sum()))


def argmax_delays(dist: DelayDistributionSequence) -> DiscreteDelaySequence:
    """
    Most probable offset per frame; ties go to the smallest column (most negative offset).
    """
    columns = np.argmax(dist.rows, axis=1)
    return DiscreteDelaySequence(delays=columns - dist.config.tau, config=dist.config)


def distribution_features(dist: DelayDistributionSequence) -> FeatureSequence:
    return FeatureSequence(kind=FeatureKind.DISTRIBUTION, data=dist.rows, config=dist.config)


def discrete_features(delays: DiscreteDelaySequence) -> FeatureSequence:
    """One-hot rows of width W."""
    one_hot = np.zeros((delays.n_frames, delays.config.width))
    one_hot[np.arange(delays.n_frames), delays.columns] = 1.0
    return FeatureSequence(kind=FeatureKind.DISCRETE_DELAY, data=one_hot, config=delays.config)


# Function to fit the activation PCA
def pca_fit(acts: Iterable[ActivationSequence], n_components: int) -> PcaModel:
    """
    Fits a principal-component projection on the pooled frames of `acts`.

    - **Parameters**:
        - `acts`: Activation sequences; frames are pooled.
        - `n_components`: Number of components D.

    - **Returns**:
        - A PcaModel with the top-D eigenvectors of the sample covariance, each sign-normalized so
          its largest-magnitude entry is positive.

    - **Raises**:
        - FitError: If there are fewer frames than D, D exceeds the activation width, or the
          covariance has fewer than D positive eigenvalues.
    """
    acts = list(acts)
    if not acts:
        raise FitError("PCA needs at least one activation sequence")
    widths = {a.dim for a in acts}
    if len(widths) != 1:
        raise DataError(f"activation sequences have differing widths {sorted(widths)}")
    frames = np.concatenate([a.values for a in acts], axis=0)
    n, d_act = frames.shape
    if n_components < 1 or n_components > d_act:
        raise FitError(f"D={n_components} must lie in [1, {d_act}]")
    if n < n_components:
        raise FitError(f"PCA with D={n_components} needs at least {n_components} frames, got {n}")

    mean = frames.mean(axis=0)
    centered = frames - mean
    covariance = centered.T @ centered / max(n - 1, 1)
    eigenvalues, eigenvectors = np.linalg.eigh(covariance)
    order = np.argsort(eigenvalues)[::-1]
    eigenvalues = eigenvalues[order]
    eigenvectors = eigenvectors[:, order]

    tol = max(float(eigenvalues[0]), 1.0) * d_act * np.finfo(np.float64).eps * 10
    n_positive = int(np.sum(eigenvalues > tol))
    if n_positive < n_components:
        raise FitError(
            f"covariance has only {n_positive} positive eigenvalues; D={n_components} is not "
            f"achievable, use D <= {n_positive}"
        )

    components = eigenvectors[:, :n_components].T.copy()
    pivots = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(n_components), pivots])
    components *= signs[:, None]
    logger.debug("PCA fit on %d frames: D=%d of %d", n, n_components, d_act)
    return PcaModel(
        mean=mean,
        components=components,
        eigenvalues=eigenvalues[:n_components],
        total_variance=float(np.trace(covariance)),
    )


def pca_project(
    model: PcaModel, acts: ActivationSequence, config: DelayWindowConfig = DelayWindowConfig()
) -> FeatureSequence:
    """
    Projects activations onto the model's components: row_i = components . (act_i - mean).

    - **Raises**:
        - DataError: If the activation width differs from the model's.
    """
    if acts.dim != len(model.mean):
        raise DataError(f"activations have width {acts.dim}, PCA model expects {len(model.mean)}")
    projected = (acts.values - model.mean) @ model.components.T
    return FeatureSequence(kind=FeatureKind.ACTIVATION_PCA, data=projected, config=config)


def _kmeans_plusplus(values: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = np.empty(k)
    centers[0] = values[rng.integers(0, len(values))]
    for i in range(1, k):
        dist_sq = np.min((values[:, None] - centers[None, :i]) ** 2, axis=1)
        probs = dist_sq / dist_sq.sum()
        centers[i] = values[rng.choice(len(values), p=probs)]
    return np.sort(centers)


def _assign(values: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # argmin returns the first minimum: ties go to the lower index
    return np.argmin(np.abs(values[:, None] - centers[None, :]), axis=1)


def _lloyd(values: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, float]:
    labels = _assign(values, centers)
    for _ in range(KMEANS_MAX_ITER):
        for j in range(len(centers)):
            members = values[labels == j]
            if len(members):
                centers[j] = members.mean()
        order = np.argsort(centers, kind="stable")
        centers = centers[order]
        new_labels = _assign(values, centers)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    inertia = float(np.sum((values - centers[labels]) ** 2))
    return centers, inertia


# Function to fit the scalar quantizer
def kmeans_fit(values: Sequence[float] | np.ndarray, k: int = 8, seed: int = 0,
               n_restarts: int = KMEANS_RESTARTS) -> Codebook:
    """
    1-D k-means: Lloyd's algorithm with k-means++ seeding, best inertia over `n_restarts` runs.

    - **Parameters**:
        - `values`: Scalars to cluster (a multiset).
        - `k`: Number of centers.
        - `seed`: Seed of the restarts.
        - `n_restarts`: Number of seeded runs.

    - **Returns**:
        - Codebook with the centers of the best run, sorted ascending.

    - **Raises**:
        - FitError: If there are fewer distinct values than `k`.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    if k < 2:
        raise FitError(f"k-means needs K >= 2, got {k}")
    n_distinct = len(np.unique(values))
    if n_distinct < k:
        raise FitError(f"k-means with K={k} needs at least {k} distinct values, got {n_distinct}")

    rng = np.random.default_rng(seed)
    best_centers, best_inertia = None, np.inf
    for _ in range(n_restarts):
        centers, inertia = _lloyd(values, _kmeans_plusplus(values, k, rng))
        if inertia < best_inertia:
            best_centers, best_inertia = centers, inertia
    logger.debug("k-means K=%d over %d values: inertia %.6g", k, len(values), best_inertia)
    return Codebook(centers=best_centers)


def quantize_grid(dist: DelayDistributionSequence, cb: Codebook) -> FeatureSequence:
    """
    Maps every distribution entry to the index of its nearest center (ties to the lower index).
    """
    codes = np.argmin(np.abs(dist.rows[:, :, None] - cb.centers[None, None, :]), axis=2)
    return FeatureSequence(kind=FeatureKind.RASTER_CODES, data=codes, config=dist.config)


def concat_features(dist: DelayDistributionSequence, pca: FeatureSequence) -> FeatureSequence:
    """
    Row-wise [distribution | PCA activations].

    - **Raises**:
        - DataError: If the frame counts differ or `pca` is not a PCA feature sequence.
    """
    if pca.kind is not FeatureKind.ACTIVATION_PCA:
        raise DataError(f"expected activation_pca features, got {pca.kind.value}")
    if pca.n_frames != dist.n_frames:
        raise DataError(f"distribution has {dist.n_frames} frames but activations have {pca.n_frames}")
    return FeatureSequence(
        kind=FeatureKind.CONCAT_AV,
        data=np.concatenate([dist.rows, pca.data], axis=1),
        config=dist.config,
    )
