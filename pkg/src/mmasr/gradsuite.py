"""Finite-difference gradient checks over every differentiable operation,
from single layers up to the combined training loss, on random micro
configurations."""

from __future__ import annotations

import numpy as np

from . import ctc as ctc_mod
from . import tensor as tn
from .data import CorpusConfig, gen_corpus
from .decoder import dual_cross_attention, decoder_forward
from .encoder import (
    AudioFeatures,
    EncoderConfig,
    ctc_head,
    encode_audio,
    init_encoder_params,
)
from .layers import (
    attention,
    conv_module,
    feed_forward,
    init_attention_params,
    layer_norm,
)
from .model import Model, ModelConfig, make_decoder_config
from .tensor import Tensor
from .train import TrainConfig, utterance_losses
from .visual import encode_visual, init_visual_params
from .model import _walk  # noqa: F401  (re-exported for tests)

DEFAULT_EPS = 1e-5
DEFAULT_TOL = 1e-4


def param_grad_check(build_loss, param, eps=DEFAULT_EPS):
    """Like tensor.grad_check but differentiates w.r.t. an in-place parameter."""
    loss = build_loss()
    for node in tn._topo_order(loss):
        node.grad = None  # clear leftovers from earlier checks on shared params
    loss.backward()
    analytic = param.grad.copy() if param.grad is not None else np.zeros_like(param.data)
    param.grad = None
    numeric = np.zeros_like(param.data)
    flat_p = param.data.reshape(-1)
    flat_n = numeric.reshape(-1)
    with tn.no_grad():
        for i in range(flat_p.size):
            orig = flat_p[i]
            flat_p[i] = orig + eps
            fp = build_loss().item()
            flat_p[i] = orig - eps
            fm = build_loss().item()
            flat_p[i] = orig
            flat_n[i] = (fp - fm) / (2.0 * eps)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def _rand(rng, *shape):
    return Tensor(rng.uniform(-1.0, 1.0, shape))


def _weighted_sum(x, rng):
    """Random linear functional, turning any tensor output into a scalar."""
    w = rng.uniform(-1.0, 1.0, x.shape)
    return lambda y: tn.sum_all(tn.mul(y, Tensor(w)))


def check_attention(rng, eps):
    d, heads, lq, lk = 4, 2, 3, 4
    params = init_attention_params(d, heads, rng)
    q, k, v = _rand(rng, lq, d), _rand(rng, lk, d), _rand(rng, lk, d)
    reduce = _weighted_sum(attention(q, k, v, params), rng)
    errs = [tn.grad_check(lambda t: reduce(attention(t, k, v, params)), q, eps)]
    for p in (params.w_q, params.w_k, params.w_v, params.w_o):
        errs.append(param_grad_check(lambda: reduce(attention(q, k, v, params)), p, eps))
    return max(errs)


def check_layer_norm(rng, eps):
    l, d = 3, 5
    x, g, b = _rand(rng, l, d), _rand(rng, d), _rand(rng, d)
    reduce = _weighted_sum(layer_norm(x, g, b), rng)
    errs = [tn.grad_check(lambda t: reduce(layer_norm(t, g, b)), x, eps),
            param_grad_check(lambda: reduce(layer_norm(x, g, b)), g, eps),
            param_grad_check(lambda: reduce(layer_norm(x, g, b)), b, eps)]
    return max(errs)


def check_feed_forward(rng, eps):
    l, d, d_ff = 3, 4, 6
    x, w1, w2 = _rand(rng, l, d), _rand(rng, d, d_ff), _rand(rng, d_ff, d)
    reduce = _weighted_sum(feed_forward(x, w1, w2), rng)
    # ReLU kinks: nudge activations away from zero for a clean check.
    w1.data += 0.05 * np.sign(w1.data)
    errs = [tn.grad_check(lambda t: reduce(feed_forward(t, w1, w2)), x, eps),
            param_grad_check(lambda: reduce(feed_forward(x, w1, w2)), w1, eps),
            param_grad_check(lambda: reduce(feed_forward(x, w1, w2)), w2, eps)]
    return max(errs)


def check_conv_module(rng, eps):
    l, d, width = 5, 4, 3
    x = _rand(rng, l, d)
    kernel, w_in, w_out = _rand(rng, width, d), _rand(rng, d, d), _rand(rng, d, d)

    def fwd(inp):
        return conv_module(inp, kernel, w_in=w_in, w_out=w_out, act=tn.silu)

    reduce = _weighted_sum(fwd(x), rng)
    errs = [tn.grad_check(lambda t: reduce(fwd(t)), x, eps)]
    for p in (kernel, w_in, w_out):
        errs.append(param_grad_check(lambda: reduce(fwd(x)), p, eps))
    return max(errs)


def check_encoder(rng, eps):
    cfg = EncoderConfig(n_blocks=2, n_heads=2, d_model=4, d_ff=6, conv_width=3,
                        subsample_factor=2)
    d_in = 3
    params = init_encoder_params(cfg, d_in, rng)
    x = _rand(rng, 6, d_in)
    reduce = _weighted_sum(encode_audio(x, cfg, params).frames, rng)
    errs = [tn.grad_check(lambda t: reduce(encode_audio(t, cfg, params).frames), x, eps)]
    flat = dict(_walk("enc", params))
    names = sorted(flat)
    for name in [names[i] for i in rng.choice(len(names), 3, replace=False)]:
        errs.append(param_grad_check(
            lambda: reduce(encode_audio(x, cfg, params).frames), flat[name], eps))
    return max(errs)


def _micro_model(rng_seed):
    enc = EncoderConfig(n_blocks=1, n_heads=2, d_model=4, d_ff=6, conv_width=3,
                        subsample_factor=1)
    dec = make_decoder_config(3, 2, n_blocks=2, n_heads=2, d_model=4, d_ff=6)
    cfg = ModelConfig(d_in=3, v_content=3, n_background=2, encoder=enc, decoder=dec)
    return Model.init(cfg, rng_seed)


def check_dual_cross_attention(rng, eps):
    model = _micro_model(int(rng.integers(1 << 30)))
    cross = model.decoder.blocks[0].cross
    d = 4
    q = _rand(rng, 2, d)
    t_feats = AudioFeatures(_rand(rng, 3, d), 3)
    i_feats = encode_visual([1, 2], model.visual)

    def fwd():
        iv = encode_visual([1, 2], model.visual)
        return dual_cross_attention(q, t_feats, iv, cross)

    reduce = _weighted_sum(dual_cross_attention(q, t_feats, i_feats, cross), rng)
    errs = [tn.grad_check(
        lambda t: reduce(dual_cross_attention(t, t_feats, i_feats, cross)), q, eps)]
    for p in (cross.audio_branch.w_k, cross.visual_branch.w_k,
              cross.visual_branch.w_o, model.visual.embed):
        errs.append(param_grad_check(lambda: reduce(fwd()), p, eps))
    return max(errs)


def check_decoder_forward(rng, eps):
    model = _micro_model(int(rng.integers(1 << 30)))
    dec_cfg = model.cfg.decoder
    t_feats = AudioFeatures(_rand(rng, 3, 4), 3)
    targets = [dec_cfg.bos_id, 1, 2]

    def fwd():
        iv = encode_visual([2, 3], model.visual)
        return decoder_forward(targets, t_feats, iv, dec_cfg, model.decoder)

    reduce = _weighted_sum(fwd(), rng)
    errs = [tn.grad_check(
        lambda t: reduce(decoder_forward(
            targets, AudioFeatures(t, 3),
            encode_visual([2, 3], model.visual), dec_cfg, model.decoder)),
        t_feats.frames, eps)]
    flat = dict(_walk("dec", model.decoder))
    names = sorted(flat)
    for name in [names[i] for i in rng.choice(len(names), 3, replace=False)]:
        errs.append(param_grad_check(lambda: reduce(fwd()), flat[name], eps))
    errs.append(param_grad_check(lambda: reduce(fwd()), model.visual.attn.w_v, eps))
    return max(errs)


def check_ctc_loss(rng, eps):
    t_len, v = int(rng.integers(3, 6)), 3
    u = int(rng.integers(1, 3))
    labels = [int(x) for x in rng.integers(1, v + 1, u)]
    x = _rand(rng, t_len, v + 1)
    return tn.grad_check(
        lambda t: ctc_mod.ctc_loss(tn.log_softmax_rows(t), labels), x, eps)


def check_train_loss(rng, eps):
    model = _micro_model(int(rng.integers(1 << 30)))
    corpus_cfg = CorpusConfig(v=3, n_groups=1, group_size=2, n_background=2,
                              d_in=3, duration_min=2, duration_max=3,
                              sent_len_min=1, sent_len_max=2,
                              n_train=1, n_valid=1, n_test=1,
                              seed=int(rng.integers(1 << 30)))
    _, splits = gen_corpus(corpus_cfg)
    utt = splits["train"][0]
    tcfg = TrainConfig(stage="fusion", lambda_ctc=0.3)

    def total():
        l_ctc, l_att = utterance_losses(model, utt, True, tcfg)
        return tn.add(tn.scale(l_ctc, tcfg.lambda_ctc),
                      tn.scale(l_att, 1.0 - tcfg.lambda_ctc))

    flat = model.named_parameters()
    errs = []
    for name in ("encoder.in_proj", "ctc_w", "visual.attn.w_k",
                 "decoder.blocks.0.cross.audio_branch.w_q", "decoder.out_w"):
        errs.append(param_grad_check(total, flat[name], eps))
    return max(errs)


CHECKS = {
    "attention": check_attention,
    "layer_norm": check_layer_norm,
    "feed_forward": check_feed_forward,
    "conv_module": check_conv_module,
    "encoder_stack": check_encoder,
    "dual_cross_attention": check_dual_cross_attention,
    "decoder_forward": check_decoder_forward,
    "ctc_loss": check_ctc_loss,
    "train_loss": check_train_loss,
}

# Heavier whole-stack checks run fewer random configs than single layers.
CASES = {"encoder_stack": 20, "decoder_forward": 20, "train_loss": 20}


def run_suite(n_cases=20, eps=DEFAULT_EPS, tol=DEFAULT_TOL, seed=0):
    """Returns [(name, max_rel_err, passed)] across random micro-configs."""
    results = []
    for idx, (name, fn) in enumerate(CHECKS.items()):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 100 + idx]))
        worst = 0.0
        for _ in range(min(n_cases, CASES.get(name, n_cases))):
            worst = max(worst, fn(rng, eps))
        results.append((name, worst, worst < tol))
    return results
