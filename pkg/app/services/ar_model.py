"""
Autoregressive Transformer decoder over synchronization feature sequences.

Position 0 holds a learned start token; position i holds frame i-1. Row i of the output is the
prediction of frame i, so it depends only on the start token and frames 0..i-1.
"""
import math
from typing import Union
import torch
import torch.nn as nn
import torch.nn.functional as F
from app.schemas.feature_schemas import FeatureKind, FeatureSequence
from app.schemas.model_schemas import ArConfig, HeadKind
from app.utils.errors import DataError, UsageError

INIT_STD = 0.02


class CausalSelfAttention(nn.Module):
    def __init__(self, cfg: ArConfig):
        super().__init__()
        self.n_heads = cfg.n_heads
        self.head_dim = cfg.head_dim
        self.qkv = nn.Linear(cfg.d_model, 3 * cfg.d_model)
        self.proj = nn.Linear(cfg.d_model, cfg.d_model)
        self.attn_dropout = nn.Dropout(cfg.dropout_rate)
        self.resid_dropout = nn.Dropout(cfg.dropout_rate)
        mask = torch.tril(torch.ones(cfg.n_positions, cfg.n_positions, dtype=torch.bool))
        self.register_buffer("mask", mask, persistent=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, c = x.shape
        q, k, v = self.qkv(x).split(c, dim=2)
        q = q.view(b, t, self.n_heads, self.head_dim).transpose(1, 2)
        k = k.view(b, t, self.n_heads, self.head_dim).transpose(1, 2)
        v = v.view(b, t, self.n_heads, self.head_dim).transpose(1, 2)

        weights = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        weights = weights.masked_fill(~self.mask[:t, :t], float("-inf"))
        weights = self.attn_dropout(torch.softmax(weights, dim=-1))
        out = (weights @ v).transpose(1, 2).contiguous().view(b, t, c)
        return self.resid_dropout(self.proj(out))


class DecoderBlock(nn.Module):
    """Pre-layer-norm block: attention then a GELU feed-forward of width 4*d_model."""

    def __init__(self, cfg: ArConfig):
        super().__init__()
        self.ln_1 = nn.LayerNorm(cfg.d_model)
        self.attn = CausalSelfAttention(cfg)
        self.ln_2 = nn.LayerNorm(cfg.d_model)
        self.mlp = nn.Sequential(
            nn.Linear(cfg.d_model, 4 * cfg.d_model),
            nn.GELU(),
            nn.Linear(4 * cfg.d_model, cfg.d_model),
            nn.Dropout(cfg.dropout_rate),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln_1(x))
        return x + self.mlp(self.ln_2(x))


class SyncDecoder(nn.Module):
    """
    All learnable weights of the decoder plus its configuration.

    - **Attributes**:
        - `input_proj`: Affine d_in -> d_model (vector heads).
        - `code_embed`: Code embedding K -> d_model (raster head).
        - `start_token`: Input at position 0.
        - `pos_enc`: Learnable positional encodings.
        - `blocks`: Decoder blocks.
        - `ln_f`: Final layer norm.
        - `output_proj`: Affine d_model -> d_out.
    """

    def __init__(self, cfg: ArConfig):
        super().__init__()
        self.config = cfg
        if cfg.head is HeadKind.RASTER_CODEBOOK:
            self.code_embed = nn.Embedding(cfg.raster_k, cfg.d_model)
        else:
            self.input_proj = nn.Linear(cfg.d_in, cfg.d_model)
        self.start_token = nn.Parameter(torch.zeros(cfg.d_model))
        self.pos_enc = nn.Parameter(torch.zeros(cfg.n_positions, cfg.d_model))
        self.drop = nn.Dropout(cfg.dropout_rate)
        self.blocks = nn.ModuleList(DecoderBlock(cfg) for _ in range(cfg.n_blocks))
        self.ln_f = nn.LayerNorm(cfg.d_model)
        self.output_proj = nn.Linear(cfg.d_model, cfg.d_out)

    def _decode(self, embedded: torch.Tensor) -> torch.Tensor:
        # Shift right by one: the start token takes position 0
        b, t, _ = embedded.shape
        start = self.start_token.expand(b, 1, -1)
        h = torch.cat([start, embedded[:, :-1]], dim=1) + self.pos_enc[:t]
        h = self.drop(h)
        for block in self.blocks:
            h = block(h)
        return self.output_proj(self.ln_f(h))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """
        Predicts every frame from its history.

        - **Parameters**:
            - `x`: Features, B x T x d_in.

        - **Returns**:
            - Head outputs, B x T x d_out (softmax rows, sigmoid entries, or linear values).

        - **Raises**:
            - UsageError: If the model has the raster head.
            - DataError: If T exceeds n_max or the width is not d_in.
        """
        cfg = self.config
        if cfg.head is HeadKind.RASTER_CODEBOOK:
            raise UsageError("raster_codebook models take code grids: use forward_raster")
        if x.dim() != 3 or x.shape[-1] != cfg.d_in:
            raise DataError(f"expected B x T x {cfg.d_in} features, got shape {tuple(x.shape)}")
        if x.shape[1] > cfg.n_max:
            raise DataError(f"sequence of {x.shape[1]} frames exceeds n_max={cfg.n_max}")
        out = self._decode(self.input_proj(x))
        if cfg.head is HeadKind.SOFTMAX:
            return torch.softmax(out, dim=-1)
        if cfg.head is HeadKind.SIGMOID:
            return torch.sigmoid(out)
        return out

    def forward_raster(self, codes: torch.Tensor) -> torch.Tensor:
        """
        Per-cell logits of a code grid unrolled in raster order (frame-major, then delay).

        - **Parameters**:
            - `codes`: Integer codes, B x T x W.

        - **Returns**:
            - Logits, B x T x W x K; cell (i, q) depends only on cells before it in raster order.
        """
        cfg = self.config
        if cfg.head is not HeadKind.RASTER_CODEBOOK:
            raise UsageError(f"forward_raster needs the raster_codebook head, model has {cfg.head.value}")
        if codes.dim() != 3 or codes.shape[-1] != cfg.d_in:
            raise DataError(f"expected B x T x {cfg.d_in} codes, got shape {tuple(codes.shape)}")
        b, t, w = codes.shape
        if t > cfg.n_max:
            raise DataError(f"sequence of {t} frames exceeds n_max={cfg.n_max}")
        if codes.numel() and (codes.min() < 0 or codes.max() >= cfg.raster_k):
            raise DataError(f"codes must lie in [0, {cfg.raster_k})")
        logits = self._decode(self.code_embed(codes.reshape(b, t * w)))
        return logits.view(b, t, w, cfg.raster_k)


# Function to build freshly initialized parameters
def init_params(cfg: ArConfig, seed: int, dtype: torch.dtype = torch.float32) -> SyncDecoder:
    """
    Builds a decoder with weights drawn i.i.d. normal(0, 0.02), zero biases and unit layer-norm
    scales. Deterministic given `seed`; the global torch RNG is left untouched.

    - **Parameters**:
        - `cfg`: Model configuration.
        - `seed`: Initialization seed.
        - `dtype`: Parameter dtype (float32 for training, float64 for reference checks).

    - **Returns**:
        - The initialized model, in eval mode.
    """
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = SyncDecoder(cfg)
        for name, param in model.named_parameters():
            if isinstance(_owner(model, name), nn.LayerNorm) and name.endswith("weight"):
                nn.init.ones_(param)
            elif name.endswith("bias"):
                nn.init.zeros_(param)
            else:
                nn.init.normal_(param, mean=0.0, std=INIT_STD)
    return model.to(dtype).eval()


def _owner(model: nn.Module, param_name: str) -> nn.Module:
    module_path = param_name.rsplit(".", 1)[0] if "." in param_name else ""
    return model.get_submodule(module_path) if module_path else model


def to_tensor(x: FeatureSequence, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Feature data as a 1 x T x d tensor (long for raster codes)."""
    data = torch.from_numpy(x.data.copy())
    if x.kind is FeatureKind.RASTER_CODES:
        return data.long().unsqueeze(0)
    return data.to(dtype).unsqueeze(0)


def _run(params: SyncDecoder, fn, train_mode: bool, seed: int) -> torch.Tensor:
    was_training = params.training
    params.train(train_mode)
    try:
        if not train_mode:
            with torch.no_grad():
                return fn()
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            return fn()
    finally:
        params.train(was_training)


def forward(params: SyncDecoder, x: Union[FeatureSequence, torch.Tensor],
            train_mode: bool = False, seed: int = 0) -> torch.Tensor:
    """
    Predictions for every frame of `x`.

    - **Parameters**:
        - `params`: The decoder.
        - `x`: A FeatureSequence (returns T x d_out) or a B x T x d_in tensor.
        - `train_mode`: Enables dropout, seeded by `seed`.
        - `seed`: Dropout seed; ignored when `train_mode` is off.

    - **Returns**:
        - Predictions x_hat, one row per input frame.
    """
    dtype = next(params.parameters()).dtype
    batched = x if isinstance(x, torch.Tensor) else to_tensor(x, dtype)
    out = _run(params, lambda: params(batched), train_mode, seed)
    return out if isinstance(x, torch.Tensor) else out[0]


def forward_raster(params: SyncDecoder, codes: Union[FeatureSequence, torch.Tensor],
                   train_mode: bool = False, seed: int = 0) -> torch.Tensor:
    """
    Per-cell logits of a raster code grid (T x W x K for a FeatureSequence input).
    """
    if isinstance(codes, FeatureSequence) and codes.kind is not FeatureKind.RASTER_CODES:
        raise UsageError(f"forward_raster needs raster_codes features, got {codes.kind.value}")
    batched = codes if isinstance(codes, torch.Tensor) else to_tensor(codes)
    out = _run(params, lambda: params.forward_raster(batched), train_mode, seed)
    return out if isinstance(codes, torch.Tensor) else out[0]
