"""Conformer-lite speech encoder with a linear CTC head.

Desk-scale defaults shrink the published 12-block configuration so the
whole stack trains on a CPU in minutes; depth and width stay configurable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .errors import ConfigError, ContractError
from .layers import (
    AttentionParams,
    attention,
    conv_module,
    feed_forward,
    init_attention_params,
    layer_norm,
    sinusoidal_positions,
)
from .tensor import Tensor


@dataclass
class EncoderConfig:
    n_blocks: int = 4
    n_heads: int = 4
    d_model: int = 64
    d_ff: int = 256
    conv_width: int = 7
    subsample_factor: int = 2
    # Reserved hook for an intermediate-layer CTC tap; not implemented.
    intermediate_ctc_block: int | None = None

    def __post_init__(self):
        if self.n_blocks < 0:
            raise ConfigError("n_blocks must be >= 0")
        if self.subsample_factor not in (1, 2, 4):
            raise ConfigError(f"subsample_factor must be 1, 2 or 4, got {self.subsample_factor}")
        if self.conv_width % 2 == 0:
            raise ConfigError(f"conv_width must be odd, got {self.conv_width}")
        if self.intermediate_ctc_block is not None:
            raise ConfigError("intermediate-layer CTC is not implemented")


@dataclass
class AudioFeatures:
    frames: Tensor  # [t_len x d_model]
    t_len: int


@dataclass
class LayerNormParams:
    gamma: Tensor
    beta: Tensor


@dataclass
class FeedForwardParams:
    w1: Tensor
    w2: Tensor


@dataclass
class ConvModuleParams:
    w_in: Tensor
    kernel: Tensor  # [width x d_model]
    w_out: Tensor


@dataclass
class EncoderBlockParams:
    ln_ffn1: LayerNormParams
    ffn1: FeedForwardParams
    ln_attn: LayerNormParams
    attn: AttentionParams
    ln_conv: LayerNormParams
    conv: ConvModuleParams
    ln_ffn2: LayerNormParams
    ffn2: FeedForwardParams
    ln_out: LayerNormParams


@dataclass
class EncoderParams:
    in_proj: Tensor  # [d_in x d_model]
    blocks: list = field(default_factory=list)


def init_layer_norm(d, _rng=None):
    return LayerNormParams(gamma=Tensor(np.ones(d)), beta=Tensor(np.zeros(d)))


def init_feed_forward(d, d_ff, rng):
    return FeedForwardParams(
        w1=Tensor(rng.normal(0.0, 1.0 / math.sqrt(d), (d, d_ff))),
        w2=Tensor(rng.normal(0.0, 1.0 / math.sqrt(d_ff), (d_ff, d))),
    )


def init_conv_module(d, width, rng):
    return ConvModuleParams(
        w_in=Tensor(rng.normal(0.0, 1.0 / math.sqrt(d), (d, d))),
        kernel=Tensor(rng.normal(0.0, 1.0 / math.sqrt(width), (width, d))),
        w_out=Tensor(rng.normal(0.0, 1.0 / math.sqrt(d), (d, d))),
    )


def init_encoder_params(cfg, d_in, rng):
    blocks = []
    for _ in range(cfg.n_blocks):
        blocks.append(
            EncoderBlockParams(
                ln_ffn1=init_layer_norm(cfg.d_model),
                ffn1=init_feed_forward(cfg.d_model, cfg.d_ff, rng),
                ln_attn=init_layer_norm(cfg.d_model),
                attn=init_attention_params(cfg.d_model, cfg.n_heads, rng),
                ln_conv=init_layer_norm(cfg.d_model),
                conv=init_conv_module(cfg.d_model, cfg.conv_width, rng),
                ln_ffn2=init_layer_norm(cfg.d_model),
                ffn2=init_feed_forward(cfg.d_model, cfg.d_ff, rng),
                ln_out=init_layer_norm(cfg.d_model),
            )
        )
    return EncoderParams(
        in_proj=Tensor(rng.normal(0.0, 1.0 / math.sqrt(d_in), (d_in, cfg.d_model))),
        blocks=blocks,
    )


def _ln(x, p):
    return layer_norm(x, p.gamma, p.beta)


def encoder_block(x, p):
    """Macaron block: half-FFN, self-attention, conv, half-FFN, layer norm."""
    x = tn.add(x, tn.scale(feed_forward(_ln(x, p.ln_ffn1), p.ffn1.w1, p.ffn1.w2), 0.5))
    h = _ln(x, p.ln_attn)
    x = tn.add(x, attention(h, h, h, p.attn))
    x = tn.add(x, conv_module(_ln(x, p.ln_conv), p.conv.kernel,
                              w_in=p.conv.w_in, w_out=p.conv.w_out, act=tn.silu))
    x = tn.add(x, tn.scale(feed_forward(_ln(x, p.ln_ffn2), p.ffn2.w1, p.ffn2.w2), 0.5))
    return _ln(x, p.ln_out)


def encode_audio(frames, cfg, params):
    """Project, subsample by strided mean pooling, add positions, run the stack."""
    frames = tn.as_tensor(frames)
    raw_len = frames.shape[0]
    if raw_len < cfg.subsample_factor:
        raise ContractError(
            f"input of {raw_len} frames is shorter than subsample factor "
            f"{cfg.subsample_factor}"
        )
    h = tn.matmul(frames, params.in_proj)
    if cfg.subsample_factor > 1:
        h = tn.mean_pool_rows(h, cfg.subsample_factor)
    t_len = h.shape[0]
    h = tn.add(h, Tensor(sinusoidal_positions(t_len, cfg.d_model)))
    for block in params.blocks:
        h = encoder_block(h, block)
    return AudioFeatures(frames=h, t_len=t_len)


def ctc_head(features, w):
    """Per-frame log-softmax over vocab plus blank (index 0)."""
    return tn.log_softmax_rows(tn.matmul(features.frames, w))
