"""Joint CTC+attention training with the two-stage recipe, Adam with
inverse-sqrt warmup, and bit-exact checkpointing.

Stage 1 trains the encoder, CTC head and an audio-only decoding path;
stage 2 re-initializes the fusion parameters, freezes the speech encoder,
and trains the fusion decoder plus the visual encoder.
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass

import numpy as np

from . import ctc as ctc_mod
from . import tensor as tn
from .decoder import beam_decode, decoder_forward
from .encoder import ctc_head, encode_audio
from .errors import (
    CheckpointShapeError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ConfigError,
    FeasibilityError,
    RecipeError,
)
from .metrics import EditCounts, align_edit, wer
from .model import Model, ModelConfig
from .visual import empty_visual, encode_visual

STAGES = ("audio_only", "fusion")

CKPT_MAGIC = b"MMASRCK1"
CKPT_VERSION = 1


@dataclass
class TrainConfig:
    stage: str = "audio_only"
    lambda_ctc: float = 0.3
    peak_lr: float = 4e-3
    warmup: int = 100
    batch_size: int = 8
    max_steps: int = 500
    seed: int = 0
    freeze_encoder: bool = False
    freeze_visual: bool = False
    label_smoothing: float = 0.1
    p_visual_dropout: float = 0.15
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_eps: float = 1e-9
    val_every: int = 0
    val_subset: int = 0  # 0 = all validation utterances

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ConfigError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if not 0.0 <= self.lambda_ctc <= 1.0:
            raise ConfigError("lambda_ctc must lie in [0, 1]")
        if self.warmup < 0:
            raise ConfigError("warmup must be >= 0")
        if self.batch_size < 1 or self.max_steps < 0:
            raise ConfigError("invalid batch_size/max_steps")


class Adam:
    """Adam with Noam-style inverse-sqrt warmup.

    Parameter and moment values are rounded to float32 precision after
    every update so checkpoints round-trip bitwise.
    """

    def __init__(self, params, trainable, peak_lr, warmup,
                 beta1=0.9, beta2=0.98, eps=1e-9, t=0):
        self.params = params  # name -> Tensor
        self.trainable = list(trainable)
        unknown = [n for n in self.trainable if n not in params]
        if unknown:
            raise ConfigError(f"unknown trainable parameters: {unknown[:3]}")
        self.peak_lr = peak_lr
        self.warmup = warmup
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = t
        self.m = {n: np.zeros_like(params[n].data) for n in self.trainable}
        self.v = {n: np.zeros_like(params[n].data) for n in self.trainable}

    def lr(self, t):
        if self.warmup > 0:
            return self.peak_lr * min(t / self.warmup, math.sqrt(self.warmup / t))
        return self.peak_lr * min(1.0, 1.0 / math.sqrt(t))

    def step(self):
        self.t += 1
        lr = self.lr(self.t)
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name in self.trainable:
            p = self.params[name]
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data = p.data.astype("<f4").astype(np.float64)
            self.m[name] = m.astype("<f4").astype(np.float64)
            self.v[name] = v.astype("<f4").astype(np.float64)
        return lr

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


def trainable_names(model, cfg):
    names = list(model.named_parameters())
    out = []
    for n in names:
        if cfg.freeze_encoder and (n.startswith("encoder.") or n == "ctc_w"):
            continue
        if cfg.stage == "audio_only" and _is_fusion_param(n):
            continue
        if cfg.freeze_visual and n.startswith("visual."):
            continue
        out.append(n)
    return out


def _is_fusion_param(name):
    return name.startswith("visual.") or ".cross.visual_branch." in name


def label_smoothed_ce(logits, targets, smoothing):
    """Mean label-smoothed cross-entropy over positions."""
    n, vocab = logits.shape
    logp = tn.log_softmax_rows(logits)
    picked = tn.sum_all(tn.take_entries(logp, np.arange(n), np.asarray(targets)))
    loss = tn.scale(picked, -(1.0 - smoothing))
    if smoothing > 0.0:
        loss = tn.add(loss, tn.scale(tn.sum_all(logp), -smoothing / vocab))
    return tn.scale(loss, 1.0 / n)


def utterance_losses(model, utt, use_visual, cfg):
    """CTC and attention losses for one utterance; raises FeasibilityError
    when the subsampled frame count cannot align the reference."""
    enc_cfg = model.cfg.encoder
    t_len = -(-utt.audio.shape[0] // enc_cfg.subsample_factor)
    ctc_mod.check_feasible(t_len, utt.ref)
    audio = np.asarray(utt.audio, dtype=np.float64)
    if cfg.freeze_encoder:
        # Frozen speech path: detach the encoder and report CTC without grads.
        with tn.no_grad():
            feats = encode_audio(audio, enc_cfg, model.encoder)
            loss_ctc = ctc_mod.ctc_loss(ctc_head(feats, model.ctc_w), utt.ref)
    else:
        feats = encode_audio(audio, enc_cfg, model.encoder)
        loss_ctc = ctc_mod.ctc_loss(ctc_head(feats, model.ctc_w), utt.ref)
    if use_visual and utt.ocr:
        vis = encode_visual(utt.ocr, model.visual, frozen=cfg.freeze_visual)
    else:
        vis = empty_visual(model.cfg.decoder.d_model)
    dec_cfg = model.cfg.decoder
    targets_in = [dec_cfg.bos_id] + list(utt.ref)
    targets_out = list(utt.ref) + [dec_cfg.eos_id]
    logits = decoder_forward(targets_in, feats, vis, dec_cfg, model.decoder)
    loss_att = label_smoothed_ce(logits, targets_out, cfg.label_smoothing)
    return loss_ctc, loss_att


def train_step(model, batch, cfg, opt, use_visual_flags=None):
    """One optimizer update on a batch. Infeasible utterances are skipped
    (counted, never fatal). Returns the loss report for the step."""
    if not batch:
        raise ConfigError("empty batch")
    if use_visual_flags is None:
        use_visual_flags = [cfg.stage == "fusion"] * len(batch)
    ctc_losses, att_losses = [], []
    skipped = 0
    for utt, use_visual in zip(batch, use_visual_flags):
        try:
            l_ctc, l_att = utterance_losses(model, utt, use_visual, cfg)
        except FeasibilityError:
            skipped += 1
            continue
        ctc_losses.append(l_ctc)
        att_losses.append(l_att)
    if not ctc_losses:
        return {"loss_total": math.nan, "loss_ctc": math.nan,
                "loss_att": math.nan, "lr": opt.lr(opt.t + 1), "skipped": skipped}
    n = len(ctc_losses)
    mean_ctc = tn.scale(_sum(ctc_losses), 1.0 / n)
    mean_att = tn.scale(_sum(att_losses), 1.0 / n)
    total = tn.add(tn.scale(mean_ctc, cfg.lambda_ctc),
                   tn.scale(mean_att, 1.0 - cfg.lambda_ctc))
    opt.zero_grad()
    total.backward()
    lr = opt.step()
    opt.zero_grad()
    return {"loss_total": total.item(), "loss_ctc": mean_ctc.item(),
            "loss_att": mean_att.item(), "lr": lr, "skipped": skipped}


def _sum(tensors):
    acc = tensors[0]
    for t in tensors[1:]:
        acc = tn.add(acc, t)
    return acc


def decode_utterance(model, utt, use_visual, beam=4, max_len=None):
    dec_cfg = model.cfg.decoder
    if max_len is None:
        max_len = len(utt.ref) + 8
    with tn.no_grad():
        feats = encode_audio(np.asarray(utt.audio, dtype=np.float64),
                             model.cfg.encoder, model.encoder)
        if use_visual and utt.ocr:
            vis = encode_visual(utt.ocr, model.visual, frozen=True)
        else:
            vis = empty_visual(dec_cfg.d_model)
        return beam_decode(feats, vis, dec_cfg, model.decoder, beam=beam,
                           max_len=max_len)


def validation_wer(model, utts, use_visual, beam=1, limit=0):
    if limit:
        utts = utts[:limit]
    total = EditCounts(0, 0, 0, 0)
    for utt in utts:
        hyp = decode_utterance(model, utt, use_visual, beam=beam)
        counts, _ = align_edit(utt.ref, hyp.tokens)
        total = total + counts
    return wer(total)


def run_stage(model, train_utts, cfg, log_path=None, valid_utts=None,
              opt=None, rng=None, start_step=0):
    """Train for cfg.max_steps steps; batches are sampled i.i.d. so resuming
    from (optimizer state, rng state, step) is bit-exact."""
    if opt is None:
        opt = Adam(model.named_parameters(), trainable_names(model, cfg),
                   cfg.peak_lr, cfg.warmup, cfg.adam_beta1, cfg.adam_beta2,
                   cfg.adam_eps, t=start_step)
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3]))
    n = len(train_utts)
    history = []
    log_f = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        for step in range(start_step + 1, cfg.max_steps + 1):
            idx = rng.integers(0, n, cfg.batch_size)
            flags = None
            if cfg.stage == "fusion":
                draws = rng.random(cfg.batch_size)
                flags = [d >= cfg.p_visual_dropout for d in draws]
            batch = [train_utts[int(i)] for i in idx]
            report = train_step(model, batch, cfg, opt, use_visual_flags=flags)
            record = {"step": step, "loss_total": report["loss_total"],
                      "loss_ctc": report["loss_ctc"],
                      "loss_att": report["loss_att"], "lr": report["lr"]}
            history.append(record)
            if log_f:
                log_f.write(json.dumps(record, sort_keys=True) + "\n")
            if (cfg.val_every and valid_utts is not None
                    and step % cfg.val_every == 0):
                vw = validation_wer(model, valid_utts,
                                    use_visual=(cfg.stage == "fusion"),
                                    limit=cfg.val_subset)
                vrec = {"step": step, "valid_wer": vw}
                history.append(vrec)
                if log_f:
                    log_f.write(json.dumps(vrec, sort_keys=True) + "\n")
    finally:
        if log_f:
            log_f.close()
    return opt, rng, history


def run_recipe(model_cfg, splits, cfg_stage1, cfg_stage2, out_dir,
               model_seed=0):
    """Audio-only pretraining, then fusion training with a frozen encoder."""
    if cfg_stage1.stage != "audio_only":
        raise RecipeError("stage 1 must use stage='audio_only'")
    if cfg_stage2.stage != "fusion" or not cfg_stage2.freeze_encoder:
        raise RecipeError("stage 2 must use stage='fusion' with freeze_encoder")
    os.makedirs(out_dir, exist_ok=True)
    model = Model.init(model_cfg, model_seed)
    opt, rng, hist1 = run_stage(model, splits["train"], cfg_stage1,
                                log_path=os.path.join(out_dir, "stage1.log"),
                                valid_utts=splits.get("valid"))
    save_checkpoint(os.path.join(out_dir, "stage1.ckpt"), model, opt,
                    cfg_stage1.max_steps, rng)
    model.reinit_fusion(cfg_stage2.seed)
    opt2, rng2, hist2 = run_stage(model, splits["train"], cfg_stage2,
                                  log_path=os.path.join(out_dir, "stage2.log"),
                                  valid_utts=splits.get("valid"))
    save_checkpoint(os.path.join(out_dir, "stage2.ckpt"), model, opt2,
                    cfg_stage2.max_steps, rng2)
    return model, hist1 + hist2


# --- checkpoint format -------------------------------------------------
#
# magic (8 bytes) | header_len (uint32 LE) | header JSON (utf-8) | payload
#
# The header lists every parameter (name, shape) in payload order, then the
# optimizer moment arrays (m then v) for each trainable parameter. All
# payload arrays are little-endian float32, row-major.


def _rng_state(rng):
    return rng.bit_generator.state if rng is not None else None


def save_checkpoint(path, model, opt=None, step=0, rng=None):
    params = model.named_parameters()
    names = sorted(params)
    header = {
        "version": CKPT_VERSION,
        "model_config": model.cfg.to_json(),
        "step": step,
        "rng_state": _rng_state(rng),
        "params": [{"name": n, "shape": list(params[n].shape)} for n in names],
        "optimizer": None,
    }
    blocks = [params[n].data for n in names]
    if opt is not None:
        header["optimizer"] = {
            "trainable": opt.trainable,
            "t": opt.t,
            "peak_lr": opt.peak_lr,
            "warmup": opt.warmup,
            "beta1": opt.beta1,
            "beta2": opt.beta2,
            "eps": opt.eps,
        }
        for n in opt.trainable:
            blocks.append(opt.m[n])
        for n in opt.trainable:
            blocks.append(opt.v[n])
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", len(head)))
        f.write(head)
        for arr in blocks:
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_block(f, name, shape):
    nbytes = int(np.prod(shape)) * 4 if shape else 4
    raw = f.read(nbytes)
    if len(raw) != nbytes:
        raise CheckpointTruncatedError(
            f"checkpoint truncated while reading parameter '{name}'"
        )
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)


def load_checkpoint(path):
    """Returns (model, optimizer or None, step, rng_state or None)."""
    with open(path, "rb") as f:
        magic = f.read(len(CKPT_MAGIC))
        if magic != CKPT_MAGIC:
            raise CheckpointVersionError(f"not a checkpoint file: bad magic {magic!r}")
        raw_len = f.read(4)
        if len(raw_len) != 4:
            raise CheckpointTruncatedError("checkpoint truncated in header length")
        (hlen,) = struct.unpack("<I", raw_len)
        head = f.read(hlen)
        if len(head) != hlen:
            raise CheckpointTruncatedError("checkpoint truncated in header")
        try:
            header = json.loads(head.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointVersionError(f"unreadable checkpoint header: {e}") from e
        if header.get("version") != CKPT_VERSION:
            raise CheckpointVersionError(
                f"unsupported checkpoint version {header.get('version')}"
            )
        model_cfg = ModelConfig.from_json(header["model_config"])
        model = Model.init(model_cfg, seed=0)
        params = model.named_parameters()
        for entry in header["params"]:
            name, shape = entry["name"], tuple(entry["shape"])
            if name not in params:
                raise CheckpointShapeError(f"unknown parameter '{name}' in checkpoint")
            if tuple(params[name].shape) != shape:
                raise CheckpointShapeError(
                    f"parameter '{name}' has shape {shape} in checkpoint but "
                    f"{tuple(params[name].shape)} in config"
                )
            params[name].data = _read_block(f, name, shape)
        missing = {e["name"] for e in header["params"]} ^ set(params)
        if missing:
            raise CheckpointShapeError(
                f"checkpoint parameter list mismatch: {sorted(missing)[:3]}"
            )
        opt = None
        if header.get("optimizer") is not None:
            o = header["optimizer"]
            opt = Adam(params, o["trainable"], o["peak_lr"], o["warmup"],
                       o["beta1"], o["beta2"], o["eps"], t=o["t"])
            shapes = {e["name"]: tuple(e["shape"]) for e in header["params"]}
            for n in opt.trainable:
                opt.m[n] = _read_block(f, f"m:{n}", shapes[n])
            for n in opt.trainable:
                opt.v[n] = _read_block(f, f"v:{n}", shapes[n])
        return model, opt, header["step"], header.get("rng_state")
