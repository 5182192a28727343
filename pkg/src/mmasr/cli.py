"""Command-line entry point: data generation, training, decoding,
evaluation, and gradient self-diagnostics.

Exit codes: 0 success, 1 usage error, 2 data/config error,
3 runtime/numeric error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass, field

from .data import (
    CorpusConfig,
    gen_corpus,
    read_corpus,
    read_split,
    read_vocab,
    write_corpus,
)
from .encoder import EncoderConfig
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    CorpusFormatError,
    FeasibilityError,
    NumericError,
    OracleSizeError,
    RecipeError,
    ShapeError,
    VocabError,
)
from .metrics import align_edit, error_breakdown, wer
from .model import Model, ModelConfig, make_decoder_config
from .train import (
    TrainConfig,
    decode_utterance,
    load_checkpoint,
    run_stage,
    save_checkpoint,
)

USAGE_ERROR, DATA_ERROR, RUNTIME_ERROR = 1, 2, 3

_DATA_ERRORS = (ConfigError, CorpusFormatError, VocabError, RecipeError,
                CheckpointError, FileNotFoundError, IsADirectoryError)
_RUNTIME_ERRORS = (NumericError, ShapeError, ContractError, FeasibilityError,
                   OracleSizeError)


@dataclass
class DecoderArch:
    n_blocks: int = 2
    n_heads: int = 4
    d_model: int = 64
    d_ff: int = 256


@dataclass
class RunConfig:
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderArch = field(default_factory=DecoderArch)
    train_stage1: TrainConfig = field(default_factory=lambda: TrainConfig(stage="audio_only"))
    train_stage2: TrainConfig = field(
        default_factory=lambda: TrainConfig(stage="fusion", freeze_encoder=True))


def _strict(cls, d, section):
    if not isinstance(d, dict):
        raise ConfigError(f"section '{section}' must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in '{section}': {', '.join(unknown)}")
    return cls(**d)


def load_run_config(path):
    with open(path, "r", encoding="utf-8") as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    sections = {
        "corpus": CorpusConfig,
        "encoder": EncoderConfig,
        "decoder": DecoderArch,
        "train_stage1": TrainConfig,
        "train_stage2": TrainConfig,
    }
    unknown = sorted(set(raw) - set(sections))
    if unknown:
        raise ConfigError(f"unknown top-level config section(s): {', '.join(unknown)}")
    kwargs = {name: _strict(cls, raw[name], name)
              for name, cls in sections.items() if name in raw}
    return RunConfig(**kwargs)


def cmd_gen_data(args):
    rc = load_run_config(args.config)
    vocab, splits = gen_corpus(rc.corpus)
    write_corpus(args.out, vocab, splits, rc.corpus)
    print(f"wrote corpus to {args.out} "
          f"({', '.join(f'{k}: {len(v)}' for k, v in splits.items())})")
    return 0


def _model_config(rc, vocab):
    dec = make_decoder_config(vocab.size, vocab.n_background,
                              **dataclasses.asdict(rc.decoder))
    return ModelConfig(d_in=vocab.d_in, v_content=vocab.size,
                       n_background=vocab.n_background,
                       encoder=rc.encoder, decoder=dec)


def cmd_train(args):
    rc = load_run_config(args.config)
    vocab, splits = read_corpus(args.data)
    if "train" not in splits:
        raise ConfigError(f"no train split found under {args.data}")
    os.makedirs(args.out, exist_ok=True)
    if args.stage == 1:
        cfg = rc.train_stage1
        if cfg.stage != "audio_only":
            raise RecipeError("train_stage1 must use stage='audio_only'")
        model = Model.init(_model_config(rc, vocab), cfg.seed)
        ckpt, log = os.path.join(args.out, "stage1.ckpt"), os.path.join(args.out, "stage1.log")
    else:
        cfg = rc.train_stage2
        if cfg.stage != "fusion" or not cfg.freeze_encoder:
            raise RecipeError("train_stage2 must use stage='fusion' with freeze_encoder")
        if not args.stage1_ckpt:
            raise RecipeError("stage 2 requires --stage1-ckpt")
        if not os.path.exists(args.stage1_ckpt):
            raise RecipeError(f"stage-1 checkpoint not found: {args.stage1_ckpt}")
        model, _, _, _ = load_checkpoint(args.stage1_ckpt)
        model.reinit_fusion(cfg.seed)
        ckpt, log = os.path.join(args.out, "stage2.ckpt"), os.path.join(args.out, "stage2.log")
    if os.path.exists(log):
        os.remove(log)
    opt, rng, _ = run_stage(model, splits["train"], cfg, log_path=log,
                            valid_utts=splits.get("valid"))
    save_checkpoint(ckpt, model, opt, cfg.max_steps, rng)
    print(f"wrote {ckpt}")
    return 0


def cmd_decode(args):
    model, _, _, _ = load_checkpoint(args.ckpt)
    vocab, splits = read_corpus(args.corpus, splits=(args.split,))
    if args.split not in splits:
        raise ConfigError(f"split '{args.split}' not found under {args.corpus}")
    use_visual = args.modality == "audio+visual"
    with open(args.out, "w", encoding="utf-8") as f:
        for utt in sorted(splits[args.split], key=lambda u: u.uid):
            hyp = decode_utterance(model, utt, use_visual, beam=args.beam)
            f.write(json.dumps({"id": utt.uid, "tokens": hyp.tokens,
                                "log_prob": hyp.log_prob}, sort_keys=True) + "\n")
    print(f"wrote hypotheses to {args.out}")
    return 0


def _read_hypotheses(path):
    hyps = {}
    with open(path, "r", encoding="utf-8") as f:
        for i, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                hyps[rec["id"]] = [int(t) for t in rec["tokens"]]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise CorpusFormatError(f"bad hypothesis record: {e}", record=i) from e
    return hyps


def cmd_eval(args):
    vocab = read_vocab(args.vocab)
    refs = read_split(args.ref, vocab.d_in)
    hyps = _read_hypotheses(args.hyp)
    per_utt, paths = [], []
    totals = None
    for utt in refs:
        if utt.uid not in hyps:
            raise ConfigError(f"no hypothesis for utterance '{utt.uid}'")
        counts, path = align_edit(utt.ref, hyps[utt.uid])
        paths.append(path)
        totals = counts if totals is None else totals + counts
        per_utt.append({"id": utt.uid, "S": counts.substitutions,
                        "D": counts.deletions, "I": counts.insertions,
                        "N": counts.ref_len, "wer": wer(counts)})
    breakdown = error_breakdown(paths, vocab)
    report = {
        "overall": {"S": totals.substitutions, "D": totals.deletions,
                    "I": totals.insertions, "N": totals.ref_len,
                    "wer": wer(totals)},
        "breakdown": breakdown.as_dict(),
        "utterances": per_utt,
    }
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(report, f, sort_keys=True, indent=1)
        f.write("\n")
    o = report["overall"]
    print(f"S={o['S']} D={o['D']} I={o['I']} N={o['N']} WER={o['wer']:.4f}")
    return 0


def cmd_grad_check(args):
    from .gradsuite import run_suite

    results = run_suite(n_cases=args.cases, seed=args.seed)
    ok = True
    for name, err, passed in results:
        print(f"{name}: max_rel_err={err:.3e} {'PASS' if passed else 'FAIL'}")
        ok = ok and passed
    return 0 if ok else RUNTIME_ERROR


def build_parser():
    p = argparse.ArgumentParser(prog="mmasr",
                                description="Desk-scale multimodal ASR pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic corpus")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="run one training stage")
    t.add_argument("--config", required=True)
    t.add_argument("--stage", type=int, choices=(1, 2), required=True)
    t.add_argument("--data", required=True, help="corpus directory")
    t.add_argument("--out", required=True)
    t.add_argument("--stage1-ckpt", default=None)
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("decode", help="decode a corpus split")
    d.add_argument("--ckpt", required=True)
    d.add_argument("--corpus", required=True)
    d.add_argument("--split", default="test")
    d.add_argument("--beam", type=int, default=4)
    d.add_argument("--modality", choices=("audio", "audio+visual"),
                   default="audio+visual")
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_decode)

    e = sub.add_parser("eval", help="score hypotheses against references")
    e.add_argument("--ref", required=True, help="reference split .jsonl")
    e.add_argument("--hyp", required=True, help="hypotheses .jsonl")
    e.add_argument("--vocab", required=True, help="corpus vocab.json")
    e.add_argument("--out", required=True, help="report .json")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("grad-check", help="run the gradient-check suite")
    c.add_argument("--cases", type=int, default=5)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_grad_check)
    return p


def run_cli(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else USAGE_ERROR
    try:
        return args.func(args)
    except _DATA_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return DATA_ERROR
    except _RUNTIME_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return RUNTIME_ERROR


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
