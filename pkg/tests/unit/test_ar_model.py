import numpy as np
import pytest
import torch
from app.schemas.feature_schemas import DelayDistributionSequence, DelayWindowConfig, FeatureKind, FeatureSequence
from app.schemas.model_schemas import ArConfig, HeadKind
from app.services.ar_model import forward, forward_raster, init_params
from app.services.sync_features import distribution_features
from app.utils.errors import DataError, UsageError

W = 31


def tiny_config(head: HeadKind = HeadKind.SOFTMAX, **overrides) -> ArConfig:
    fields = dict(n_blocks=1, n_heads=2, d_model=16, d_in=W, d_out=W, n_max=10, head=head)
    if head is HeadKind.RASTER_CODEBOOK:
        fields.update(d_in=5, d_out=4, raster_k=4)
    fields.update(overrides)
    return ArConfig(**fields)


def random_distributions(rng: np.random.Generator, t: int) -> FeatureSequence:
    return distribution_features(DelayDistributionSequence(rows=rng.dirichlet(np.ones(W), size=t)))


def test_default_config_head_width():
    """
    Test the default decoder shape.

    - **Assertions**:
        - d_model=256 with 16 heads gives a per-head width of 16.
    """
    cfg = ArConfig(d_in=W, d_out=W, head=HeadKind.SOFTMAX)
    assert (cfg.n_blocks, cfg.n_heads, cfg.d_model, cfg.n_max) == (2, 16, 256, 50)
    assert cfg.head_dim == 16


def test_config_rejects_indivisible_heads():
    """
    Test ArConfig validation.

    - **Assertions**:
        - d_model not divisible by n_heads is rejected.
    """
    with pytest.raises(ValueError, match="divisible"):
        ArConfig(d_in=W, d_out=W, d_model=10, n_heads=3, head=HeadKind.SOFTMAX)


def test_init_params_determinism():
    """
    Test seeded initialization.

    - **Steps**:
        1. Initializes twice with seed 1 and once with seed 2.

    - **Assertions**:
        - Same seed gives bitwise-identical tensors; a different seed changes at least one.
        - Layer-norm scales are one and biases zero.
    """
    cfg = tiny_config()
    a, b, c = init_params(cfg, 1).state_dict(), init_params(cfg, 1).state_dict(), init_params(cfg, 2).state_dict()
    assert all(torch.equal(a[name], b[name]) for name in a)
    assert any(not torch.equal(a[name], c[name]) for name in a)
    assert torch.equal(a["blocks.0.ln_1.weight"], torch.ones(16))
    assert torch.equal(a["blocks.0.attn.qkv.bias"], torch.zeros(48))


def test_init_params_leaves_global_rng_alone():
    """
    Test that initialization does not advance the global torch generator.
    """
    torch.manual_seed(123)
    expected = torch.rand(3)
    torch.manual_seed(123)
    init_params(tiny_config(), 5)
    assert torch.equal(torch.rand(3), expected)


def test_zero_weights_give_uniform_predictions():
    """
    Test the softmax head with all parameters zeroed.

    - **Assertions**:
        - Every prediction row is uniform 1/31 and there is one row per input frame.
    """
    params = init_params(tiny_config(), 0)
    with torch.no_grad():
        for p in params.parameters():
            p.zero_()
    x = random_distributions(np.random.default_rng(0), 7)
    out = forward(params, x)
    assert out.shape == (7, W)
    torch.testing.assert_close(out, torch.full((7, W), 1 / W), atol=1e-7, rtol=0)


def test_zero_weights_raster_uniform():
    """
    Test the raster head with all parameters zeroed.

    - **Assertions**:
        - A T x W grid gives T x W x K logits whose softmax is uniform 1/K.
    """
    cfg = ArConfig(n_blocks=1, n_heads=2, d_model=16, d_in=W, d_out=8, n_max=4,
                   head=HeadKind.RASTER_CODEBOOK, raster_k=8)
    params = init_params(cfg, 0)
    with torch.no_grad():
        for p in params.parameters():
            p.zero_()
    codes = FeatureSequence(kind=FeatureKind.RASTER_CODES, data=np.random.default_rng(1).integers(0, 8, size=(3, W)))
    logits = forward_raster(params, codes)
    assert logits.shape == (3, W, 8)
    torch.testing.assert_close(torch.softmax(logits, dim=-1), torch.full((3, W, 8), 1 / 8), atol=1e-7, rtol=0)


@pytest.mark.parametrize("head", [HeadKind.SOFTMAX, HeadKind.SIGMOID, HeadKind.LINEAR])
def test_strict_causality(head):
    """
    Test the causal mask by perturbation.

    - **Steps**:
        1. Runs 100 trials: draws a batch, perturbs frame k, runs both through the model.

    - **Assertions**:
        - Predictions for frames 0..k are bitwise unchanged (row i sees frames before i only).
    """
    params = init_params(tiny_config(head), 3, torch.float64)
    gen = torch.Generator().manual_seed(0)
    for _ in range(100):
        x = torch.rand(2, 8, W, generator=gen, dtype=torch.float64)
        k = int(torch.randint(0, 8, (1,), generator=gen))
        y = x.clone()
        y[:, k] += torch.randn(2, W, generator=gen, dtype=torch.float64)
        assert torch.equal(forward(params, x)[:, :k + 1], forward(params, y)[:, :k + 1])


def test_raster_causality():
    """
    Test causality over the flattened raster order.

    - **Steps**:
        1. Runs 100 trials: perturbs cell (i, q) of a random code grid.

    - **Assertions**:
        - Logits of every cell at or before (i, q) in raster order are bitwise unchanged.
    """
    cfg = tiny_config(HeadKind.RASTER_CODEBOOK)
    params = init_params(cfg, 3, torch.float64)
    gen = torch.Generator().manual_seed(1)
    t, w, k = 6, cfg.d_in, cfg.raster_k
    for _ in range(100):
        codes = torch.randint(0, k, (1, t, w), generator=gen)
        i, q = int(torch.randint(0, t, (1,), generator=gen)), int(torch.randint(0, w, (1,), generator=gen))
        changed = codes.clone()
        changed[0, i, q] = (codes[0, i, q] + 1) % k
        position = i * w + q
        a = forward_raster(params, codes).reshape(1, t * w, k)
        b = forward_raster(params, changed).reshape(1, t * w, k)
        assert torch.equal(a[:, :position + 1], b[:, :position + 1])


def test_head_ranges():
    """
    Test head output ranges.

    - **Assertions**:
        - Softmax rows sum to 1 within 1e-6 (float32) and 1e-12 (float64); sigmoid entries lie
          in (0, 1).
    """
    x = random_distributions(np.random.default_rng(2), 10)
    single = forward(init_params(tiny_config(), 0), x)
    double = forward(init_params(tiny_config(), 0, torch.float64), x)
    assert single.dtype == torch.float32 and double.dtype == torch.float64
    assert torch.all((single.sum(dim=-1) - 1).abs() < 1e-6)
    assert torch.all((double.sum(dim=-1) - 1).abs() < 1e-12)
    sig = forward(init_params(tiny_config(HeadKind.SIGMOID), 0), x)
    assert torch.all((sig > 0) & (sig < 1))


def test_dropout_only_in_train_mode():
    """
    Test train/inference behavior of dropout.

    - **Assertions**:
        - Inference ignores the seed; training mode is reproducible per seed and differs across
          seeds.
    """
    params = init_params(tiny_config(dropout_rate=0.5), 0)
    x = random_distributions(np.random.default_rng(3), 10)
    assert torch.equal(forward(params, x, seed=1), forward(params, x, seed=2))
    assert torch.equal(forward(params, x, train_mode=True, seed=1), forward(params, x, train_mode=True, seed=1))
    assert not torch.equal(forward(params, x, train_mode=True, seed=1), forward(params, x, train_mode=True, seed=2))
    assert not params.training


def test_forward_errors():
    """
    Test forward input validation.

    - **Assertions**:
        - Too many frames and a wrong width are DataErrors; the raster entry point on a softmax
          model and the vector entry point on a raster model are UsageErrors.
    """
    params = init_params(tiny_config(), 0)
    with pytest.raises(DataError, match="n_max"):
        forward(params, random_distributions(np.random.default_rng(4), 11))
    with pytest.raises(DataError, match="features"):
        forward(params, torch.zeros(1, 3, 5))
    with pytest.raises(UsageError):
        forward_raster(params, torch.zeros(1, 3, W, dtype=torch.long))
    raster = init_params(tiny_config(HeadKind.RASTER_CODEBOOK), 0)
    with pytest.raises(UsageError):
        forward(raster, torch.zeros(1, 3, 5))
    with pytest.raises(DataError, match="codes"):
        forward_raster(raster, torch.full((1, 2, 5), 4, dtype=torch.long))


def test_window_config_width():
    """
    Test the delay window width.
    """
    assert DelayWindowConfig().width == 31
    assert DelayWindowConfig(tau=1).width == 3
