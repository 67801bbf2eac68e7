import numpy as np
import pytest
from pydantic import ValidationError
from app.schemas.data_schemas import CheckpointHeader, ManifestRecord
from app.schemas.feature_schemas import (
    AffinitySequence,
    Codebook,
    DelayDistributionSequence,
    DelayWindowConfig,
    DiscreteDelaySequence,
    FeatureKind,
    FeatureSequence,
    PcaModel,
)
from app.schemas.model_schemas import ArConfig, HeadKind, LossKind, NaiveBayesModel, TrainConfig
from app.schemas.report_schemas import MetricsReport

WINDOW = DelayWindowConfig(tau=1)


def test_delay_window_width():
    """
    Test the window width W = 2*tau + 1.
    """
    assert DelayWindowConfig().width == 31
    assert WINDOW.width == 3
    with pytest.raises(ValidationError):
        DelayWindowConfig(tau=0)


def test_ar_config_schema():
    """
    Test the `ArConfig` schema.

    - **Steps**:
        1. Builds a default softmax configuration.
        2. Builds configurations violating the head and raster constraints.

    - **Assertions**:
        - Defaults match the reference architecture; indivisible heads and a raster d_out that
          differs from raster_k are rejected.
    """
    cfg = ArConfig(d_in=31, d_out=31, head=HeadKind.SOFTMAX)
    assert (cfg.n_blocks, cfg.n_heads, cfg.d_model, cfg.n_max) == (2, 16, 256, 50)
    assert cfg.head_dim == 16
    assert cfg.n_positions == 50

    with pytest.raises(ValidationError, match="divisible"):
        ArConfig(d_in=31, d_out=31, head=HeadKind.SOFTMAX, d_model=30, n_heads=4)
    with pytest.raises(ValidationError, match="raster_k"):
        ArConfig(d_in=31, d_out=4, raster_k=8, head=HeadKind.RASTER_CODEBOOK)
    raster = ArConfig(d_in=31, d_out=8, raster_k=8, head=HeadKind.RASTER_CODEBOOK, n_max=4)
    assert raster.n_positions == 4 * 31


def test_train_config_schema():
    """
    Test the `TrainConfig` warm-up constraint.

    - **Assertions**:
        - Warm-up must be below total steps, except that zero total steps is accepted.
    """
    assert TrainConfig(total_steps=0, loss=LossKind.MSE).total_steps == 0
    with pytest.raises(ValidationError, match="warmup"):
        TrainConfig(total_steps=100, warmup_steps=100, loss=LossKind.SOFT_CE)


def test_sequence_schemas():
    """
    Test the per-frame sequence schemas.

    - **Assertions**:
        - Width, row sums, finiteness and delay range are validated, and arrays are read-only.
    """
    aff = AffinitySequence(values=np.zeros((2, 3)), config=WINDOW)
    assert aff.n_frames == 2
    assert not aff.values.flags.writeable
    with pytest.raises(ValidationError, match="width"):
        AffinitySequence(values=np.zeros((2, 4)), config=WINDOW)
    with pytest.raises(ValidationError, match="row 1, column 0"):
        AffinitySequence(values=[[0, 0, 0], [np.inf, 0, 0]], config=WINDOW)

    DelayDistributionSequence(rows=[[0.2, 0.3, 0.5]], config=WINDOW)
    with pytest.raises(ValidationError, match="row 0"):
        DelayDistributionSequence(rows=[[0.2, 0.3, 0.4]], config=WINDOW)

    delays = DiscreteDelaySequence(delays=[-1, 0, 1], config=WINDOW)
    assert delays.columns.tolist() == [0, 1, 2]
    with pytest.raises(ValidationError, match="frame 1"):
        DiscreteDelaySequence(delays=[0, 2], config=WINDOW)


def test_feature_sequence_schema():
    """
    Test the `FeatureSequence` checks for each feature kind.

    - **Assertions**:
        - Discrete rows must be one-hot, distributions must sum to 1, raster codes are integers
          of width W, and concatenated features must be wider than W.
    """
    FeatureSequence(kind=FeatureKind.DISCRETE_DELAY, data=np.eye(3), config=WINDOW)
    with pytest.raises(ValidationError, match="one-hot"):
        FeatureSequence(kind=FeatureKind.DISCRETE_DELAY, data=np.full((1, 3), 1 / 3), config=WINDOW)
    with pytest.raises(ValidationError, match="summing to 1"):
        FeatureSequence(kind=FeatureKind.DISTRIBUTION, data=np.ones((1, 3)), config=WINDOW)

    codes = FeatureSequence(kind=FeatureKind.RASTER_CODES, data=[[0, 7, 2]], config=WINDOW)
    assert codes.data.dtype == np.int64
    with pytest.raises(ValidationError, match="width"):
        FeatureSequence(kind=FeatureKind.RASTER_CODES, data=[[0, 1]], config=WINDOW)
    with pytest.raises(ValidationError, match="more than W"):
        FeatureSequence(kind=FeatureKind.CONCAT_AV, data=np.zeros((2, 3)), config=WINDOW)

    pca = FeatureSequence(kind=FeatureKind.ACTIVATION_PCA, data=np.arange(12.0).reshape(4, 3))
    part = pca.window(1, 3)
    assert part.n_frames == 2 and part.data[0, 0] == 3.0


def test_pca_and_codebook_schemas():
    """
    Test the fitted preprocessing schemas.

    - **Assertions**:
        - PCA components must be orthonormal; codebook centers must be strictly increasing.
    """
    pca = PcaModel(mean=[0.0, 0.0], components=[[1.0, 0.0]], eigenvalues=[3.0], total_variance=4.0)
    assert pca.n_components == 1
    assert pca.explained_variance_ratio == pytest.approx(0.75)
    with pytest.raises(ValidationError, match="orthonormal"):
        PcaModel(mean=[0.0, 0.0], components=[[1.0, 1.0]], eigenvalues=[3.0], total_variance=4.0)

    assert Codebook(centers=[0.0, 0.5, 1.0]).k == 3
    with pytest.raises(ValidationError, match="increasing"):
        Codebook(centers=[0.0, 0.0, 1.0])


def test_manifest_record_schema():
    """
    Test the `ManifestRecord` schema.

    - **Assertions**:
        - Labels are 0 or 1 and an interval needs 0 <= start < end.
    """
    record = ManifestRecord(path="fake_0001.avsf", label=1, category="interval", interval=[10, 19])
    assert record.interval == (10, 19)
    with pytest.raises(ValidationError):
        ManifestRecord(path="x.avsf", label=3)
    with pytest.raises(ValidationError, match="start < end"):
        ManifestRecord(path="x.avsf", label=1, interval=(7, 2))


def test_checkpoint_header_and_naive_bayes_schemas():
    """
    Test the checkpoint header format tag and the Naive Bayes count validation.
    """
    cfg = ArConfig(d_in=3, d_out=3, head=HeadKind.SOFTMAX, d_model=8, n_heads=2)
    recipe = TrainConfig(total_steps=0, loss=LossKind.SOFT_CE)
    with pytest.raises(ValidationError, match="format"):
        CheckpointHeader(format="other", model_cfg=cfg, train_cfg=recipe,
                         feature_kind=FeatureKind.DISTRIBUTION, tensors=[])

    model = NaiveBayesModel(counts=[1, 3, 0], config=WINDOW)
    assert [str(p) for p in model.probabilities_exact()] == ["2/7", "4/7", "1/7"]
    with pytest.raises(ValidationError):
        NaiveBayesModel(counts=[1, 3], config=WINDOW)


def test_metrics_report_payload():
    """
    Test the metrics.json payload of `MetricsReport`.

    - **Assertions**:
        - Without localization no localization key is written.
    """
    payload = MetricsReport(ap=0.5, auc=0.5, n_real=1, n_fake=1).to_json_dict()
    assert payload["ap"] == 0.5
    assert not any(key.startswith("localization") for key in payload)
