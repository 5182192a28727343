"""Full model container: speech encoder + CTC head, visual-text encoder,
and the fusion decoder, with flat named-parameter access for the optimizer
and checkpointing.

Parameter values are kept exactly representable in float32 (computation
stays float64) so checkpoint payloads round-trip bitwise.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .decoder import DecoderConfig, DecoderParams, init_attention_params, init_decoder_params
from .encoder import EncoderConfig, EncoderParams, init_encoder_params
from .errors import ConfigError
from .tensor import Tensor
from .visual import VisualEncoderParams, init_visual_params


@dataclass
class ModelConfig:
    d_in: int
    v_content: int  # spoken vocabulary size (token ids 1..v_content)
    n_background: int
    encoder: EncoderConfig
    decoder: DecoderConfig

    @property
    def text_vocab_size(self):
        # blank/pad row + content + background + synonyms
        return 1 + 2 * self.v_content + self.n_background

    @property
    def ctc_vocab_size(self):
        return self.v_content + 1

    def __post_init__(self):
        expected = self.text_vocab_size + 2
        if self.decoder.vocab_size != expected:
            raise ConfigError(
                f"decoder vocab_size {self.decoder.vocab_size} != text vocab "
                f"+ BOS/EOS = {expected}"
            )

    def to_json(self):
        return {
            "d_in": self.d_in,
            "v_content": self.v_content,
            "n_background": self.n_background,
            "encoder": dataclasses.asdict(self.encoder),
            "decoder": dataclasses.asdict(self.decoder),
        }

    @classmethod
    def from_json(cls, d):
        return cls(
            d_in=int(d["d_in"]),
            v_content=int(d["v_content"]),
            n_background=int(d["n_background"]),
            encoder=EncoderConfig(**d["encoder"]),
            decoder=DecoderConfig(**d["decoder"]),
        )


def make_decoder_config(v_content, n_background, n_blocks=2, n_heads=4,
                        d_model=64, d_ff=256):
    text_vocab = 1 + 2 * v_content + n_background
    return DecoderConfig(n_blocks=n_blocks, n_heads=n_heads, d_model=d_model,
                         d_ff=d_ff, vocab_size=text_vocab + 2)


def _walk(prefix, obj):
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            yield from _walk(f"{prefix}.{f.name}", getattr(obj, f.name))
    elif isinstance(obj, list):
        for i, item in enumerate(obj):
            yield from _walk(f"{prefix}.{i}", item)
    # ints/floats/etc. are configuration, not parameters


def round_to_f32(params):
    for _, t in params.items():
        t.data = t.data.astype("<f4").astype(np.float64)


class Model:
    def __init__(self, cfg: ModelConfig, encoder: EncoderParams, ctc_w: Tensor,
                 visual: VisualEncoderParams, decoder: DecoderParams):
        self.cfg = cfg
        self.encoder = encoder
        self.ctc_w = ctc_w
        self.visual = visual
        self.decoder = decoder

    @classmethod
    def init(cls, cfg, seed):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
        d = cfg.encoder.d_model
        if cfg.decoder.d_model != d:
            raise ConfigError("encoder and decoder must share d_model")
        encoder = init_encoder_params(cfg.encoder, cfg.d_in, rng)
        ctc_w = Tensor(rng.normal(0.0, d ** -0.5, (d, cfg.ctc_vocab_size)))
        visual = init_visual_params(cfg.text_vocab_size, d, cfg.decoder.n_heads,
                                    cfg.decoder.d_ff, rng)
        decoder = init_decoder_params(cfg.decoder, rng)
        model = cls(cfg, encoder, ctc_w, visual, decoder)
        round_to_f32(model.named_parameters())
        return model

    def named_parameters(self):
        out = {}
        for root, obj in (("encoder", self.encoder), ("ctc_w", self.ctc_w),
                          ("visual", self.visual), ("decoder", self.decoder)):
            for name, t in _walk(root, obj):
                out[name] = t
        return out

    def reinit_fusion(self, seed):
        """Fresh visual encoder and visual cross-attention branches.

        Visual-branch output projections start at zero, so right after this
        call the model behaves exactly like its audio-only parent.
        """
        rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
        d = self.cfg.decoder.d_model
        self.visual = init_visual_params(self.cfg.text_vocab_size, d,
                                         self.cfg.decoder.n_heads,
                                         self.cfg.decoder.d_ff, rng)
        for block in self.decoder.blocks:
            branch = init_attention_params(d, self.cfg.decoder.n_heads, rng)
            branch.w_o.data[:] = 0.0
            block.cross.visual_branch = branch
        round_to_f32(self.named_parameters())
