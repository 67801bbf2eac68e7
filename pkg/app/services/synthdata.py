"""
Seeded generator of synthetic affinity and activation sequences.

Real videos keep one stable (possibly shifted) offset; fakes drift, flatten or carry a
manipulated interval.
"""
from typing import Optional
import numpy as np
from app.schemas.data_schemas import FakeMode, GenConfig
from app.schemas.feature_schemas import ActivationSequence, ActivationSource, AffinitySequence
from app.services.sync_features import normalize_affinities


def _smooth(raw: np.ndarray, rho: float) -> np.ndarray:
    """AR(1) smoothing across time: s_t = rho * s_{t-1} + (1 - rho) * r_t, s_0 = r_0."""
    out = np.empty_like(raw)
    out[0] = raw[0]
    for t in range(1, len(raw)):
        out[t] = rho * out[t - 1] + (1.0 - rho) * raw[t]
    return out


def _peaked_rows(cfg: GenConfig, rng: np.random.Generator, columns: np.ndarray,
                 heights: Optional[np.ndarray] = None) -> np.ndarray:
    width = 2 * cfg.tau + 1
    rows = rng.normal(0.0, cfg.noise_sd, size=(len(columns), width))
    if heights is None:
        heights = rng.normal(cfg.peak_height_mean, cfg.peak_height_sd, size=len(columns))
    rows[np.arange(len(columns)), columns] += heights
    return rows


def _global_offset(cfg: GenConfig, rng: np.random.Generator) -> int:
    return int(rng.integers(cfg.offset_min, cfg.offset_max + 1))


def _drift_columns(cfg: GenConfig, rng: np.random.Generator, start_offset: int, n: int) -> np.ndarray:
    steps = np.rint(rng.normal(0.0, cfg.drift_step_sd, size=n)).astype(np.int64)
    steps[0] = 0
    offsets = np.empty(n, dtype=np.int64)
    current = start_offset
    for t in range(n):
        current = int(np.clip(current + steps[t], -cfg.tau, cfg.tau))
        offsets[t] = current
    return offsets + cfg.tau


# Function to generate a real video's affinities
def gen_real(cfg: GenConfig, seed: int) -> AffinitySequence:
    """
    Stable alignment: a peak at one global offset drawn from the configured range, plus noise,
    smoothed across time.

    - **Parameters**:
        - `cfg`: Generator configuration.
        - `seed`: Video seed.

    - **Returns**:
        - T x W affinities; identical for identical (cfg, seed).
    """
    rng = np.random.default_rng(seed)
    d0 = _global_offset(cfg, rng)
    columns = np.full(cfg.frames, d0 + cfg.tau)
    raw = _peaked_rows(cfg, rng, columns)
    return AffinitySequence(values=_smooth(raw, cfg.ar_rho), config=cfg.window)


def _gen_drift(cfg: GenConfig, rng: np.random.Generator) -> np.ndarray:
    d0 = _global_offset(cfg, rng)
    columns = _drift_columns(cfg, rng, d0, cfg.frames)
    return _smooth(_peaked_rows(cfg, rng, columns), cfg.ar_rho)


def _gen_flat(cfg: GenConfig, rng: np.random.Generator) -> np.ndarray:
    d0 = _global_offset(cfg, rng)
    columns = np.full(cfg.frames, d0 + cfg.tau)
    heights = rng.normal(cfg.peak_height_mean, cfg.peak_height_sd, size=cfg.frames)
    n_spans = -(-cfg.frames // cfg.flat_span)
    # The first span keeps its full peak when there are others: smoothing starts from the
    # unsmoothed first row, where a weak peak can lose the argmax to noise
    first = 1 if n_spans > 1 else 0
    flattened = rng.random(n_spans) < cfg.flat_prob
    flattened[:first] = False
    if not flattened.any():
        flattened[rng.integers(first, n_spans)] = True
    for span in np.flatnonzero(flattened):
        heights[span * cfg.flat_span:(span + 1) * cfg.flat_span] = cfg.flat_peak_height
    return _smooth(_peaked_rows(cfg, rng, columns, heights), cfg.ar_rho)


# Function to generate a fake video's affinities
def gen_fake(cfg: GenConfig, seed: int, mode: FakeMode) -> tuple[AffinitySequence, Optional[tuple[int, int]]]:
    """
    Incoherent alignment.

    - drift: the peak column performs a clipped random walk.
    - flat: random 10-frame spans keep only a weak peak at the real offset (near-uniform rows
      whose argmax is unchanged).
    - interval: a real video with one `interval_length` span replaced by drift-mode rows.

    - **Parameters**:
        - `cfg`: Generator configuration.
        - `seed`: Video seed.
        - `mode`: Fake mode.

    - **Returns**:
        - Affinities and, for interval mode, the manipulated interval [start, end).
    """
    mode = FakeMode(mode)
    rng = np.random.default_rng(seed)
    if mode is FakeMode.DRIFT:
        return AffinitySequence(values=_gen_drift(cfg, rng), config=cfg.window), None
    if mode is FakeMode.FLAT:
        return AffinitySequence(values=_gen_flat(cfg, rng), config=cfg.window), None

    values = np.array(gen_real(cfg, seed).values)
    drift = _gen_drift(cfg, rng)
    start = int(rng.integers(0, cfg.frames - cfg.interval_length + 1))
    end = start + cfg.interval_length
    values[start:end] = drift[start:end]
    return AffinitySequence(values=values, config=cfg.window), (start, end)


def activation_map(cfg: GenConfig) -> np.ndarray:
    """W x d_act map shared by every video generated with `cfg`."""
    rng = np.random.default_rng(cfg.activation_map_seed)
    return rng.normal(0.0, 1.0, size=(2 * cfg.tau + 1, cfg.d_act))


# Function to generate synthetic network activations
def gen_activations(cfg: GenConfig, seed: int, label: int,
                    source: ActivationSource = ActivationSource.AUDIO_VISUAL,
                    mode: FakeMode = FakeMode.DRIFT) -> ActivationSequence:
    """
    Activations carrying the same signal as the delay distributions: a fixed linear map of each
    frame's distribution row plus noise.

    The map is drawn from `cfg.activation_map_seed`, so all videos of a corpus share it. The
    visual-only source keeps the first half of the columns.

    - **Parameters**:
        - `cfg`: Generator configuration (`d_act`, noise level, map seed).
        - `seed`: Video seed; the same seed gives the video's affinities in `gen_real`/`gen_fake`.
        - `label`: 0 real, 1 fake.
        - `source`: Audio-visual or visual-only activations.
        - `mode`: Fake mode for label 1.
    """
    if label == 0:
        aff = gen_real(cfg, seed)
    else:
        aff, _ = gen_fake(cfg, seed, mode)
    rows = normalize_affinities(aff).rows
    noise_rng = np.random.default_rng([seed, cfg.activation_map_seed])
    values = rows @ activation_map(cfg)
    values = values + noise_rng.normal(0.0, cfg.activation_noise_sd, size=values.shape)
    if ActivationSource(source) is ActivationSource.VISUAL_ONLY:
        values = values[:, : cfg.d_act // 2]
    return ActivationSequence(values=values, source=source)


def video_seed(corpus_seed: int, label: int, index: int) -> int:
    """Seed of the index-th video of a label within a corpus."""
    return int(np.random.SeedSequence([corpus_seed, label, index]).generate_state(1)[0])
