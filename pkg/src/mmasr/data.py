"""Deterministic synthetic corpus generator.

Token id layout over one shared text vocabulary:

    0                              reserved (CTC blank)
    1 .. V                         content tokens (appear in references)
    V+1 .. V+n_background          background/distractor tokens (OCR only)
    V+n_background+1 .. +V         synonym tokens (OCR paraphrases, one per
                                   content token)

Homophone groups partition a subset of the content tokens; every token in
a group emits the same acoustic prototype, so with zero noise the audio is
bitwise identical across group members and only the OCR stream can tell
them apart.

Corpus files are JSON lines, one record per utterance, with the frame
block stored as base64 little-endian float32.
"""

from __future__ import annotations

import base64
import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, CorpusFormatError

SPLITS = ("train", "valid", "test")

_VOCAB_STREAM = 0  # SeedSequence lane for vocabulary construction


@dataclass
class CorpusConfig:
    v: int = 60
    n_groups: int = 8
    group_size: int = 3
    n_background: int = 12
    d_in: int = 16
    duration_min: int = 2
    duration_max: int = 4
    noise_sigma: float = 0.3
    p_ocr_drop: float = 0.2
    p_ocr_paraphrase: float = 0.1
    n_distractors: int = 3
    sent_len_min: int = 3
    sent_len_max: int = 8
    n_train: int = 2000
    n_valid: int = 200
    n_test: int = 200
    seed: int = 0
    prototype_margin: float = 1.0

    def __post_init__(self):
        for name in ("p_ocr_drop", "p_ocr_paraphrase"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name}={p} outside [0, 1]")
        if self.n_groups > 0 and self.group_size < 2:
            raise ConfigError("group_size must be >= 2")
        if self.n_groups * self.group_size > self.v:
            raise ConfigError("homophone groups exceed vocabulary size")
        if self.duration_min < 1:
            raise ConfigError("durations must be >= 1")
        if self.duration_max < self.duration_min:
            raise ConfigError("duration_max < duration_min")
        if self.sent_len_min < 1 or self.sent_len_max < self.sent_len_min:
            raise ConfigError("invalid sentence length range")
        if self.n_distractors < 0 or self.n_background < 1:
            raise ConfigError("invalid distractor configuration")


@dataclass
class HomophoneVocab:
    size: int  # number of content tokens
    n_background: int
    groups: list  # list of lists of content token ids
    prototypes: np.ndarray  # [n_sounds x d_in]
    token_sound: np.ndarray  # content token id -> prototype row (index 0 unused)

    @property
    def d_in(self):
        return self.prototypes.shape[1]

    @property
    def background_range(self):
        return (self.size + 1, self.size + self.n_background)

    @property
    def synonym_offset(self):
        return self.size + self.n_background

    @property
    def text_vocab_size(self):
        # blank/pad + content + background + synonyms
        return 1 + self.size + self.n_background + self.size

    def prototype_for(self, token):
        return self.prototypes[self.token_sound[token]]

    def group_of(self, token):
        for g in self.groups:
            if token in g:
                return g
        return None

    def same_group(self, a, b):
        g = self.group_of(a)
        return g is not None and b in g and a != b

    def is_background(self, token):
        lo, hi = self.background_range
        return lo <= token <= hi

    def synonym(self, token):
        return token + self.synonym_offset

    def to_json(self):
        return {
            "size": self.size,
            "n_background": self.n_background,
            "groups": [list(map(int, g)) for g in self.groups],
            "prototypes": self.prototypes.tolist(),
            "token_sound": self.token_sound.tolist(),
        }

    @classmethod
    def from_json(cls, d):
        return cls(
            size=int(d["size"]),
            n_background=int(d["n_background"]),
            groups=[list(map(int, g)) for g in d["groups"]],
            prototypes=np.asarray(d["prototypes"], dtype=np.float64),
            token_sound=np.asarray(d["token_sound"], dtype=np.int64),
        )


@dataclass(eq=False)
class Utterance:
    uid: str
    ref: list  # content token ids, non-empty
    durations: list  # per-token frame counts, >= 1
    audio: np.ndarray  # [sum(durations) x d_in] float32
    ocr: list  # OCR token ids, possibly empty

    def __eq__(self, other):
        return (
            isinstance(other, Utterance)
            and self.uid == other.uid
            and self.ref == other.ref
            and self.durations == other.durations
            and self.ocr == other.ocr
            and self.audio.dtype == other.audio.dtype
            and self.audio.shape == other.audio.shape
            and self.audio.tobytes() == other.audio.tobytes()
        )


def build_vocab(cfg):
    """Construct the homophone vocabulary deterministically from the seed."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, _VOCAB_STREAM]))
    tokens = rng.permutation(np.arange(1, cfg.v + 1))
    groups = [
        sorted(int(t) for t in tokens[i * cfg.group_size : (i + 1) * cfg.group_size])
        for i in range(cfg.n_groups)
    ]
    n_grouped = cfg.n_groups * cfg.group_size
    ungrouped = sorted(int(t) for t in tokens[n_grouped:])
    n_sounds = cfg.n_groups + len(ungrouped)

    token_sound = np.zeros(cfg.v + 1, dtype=np.int64)
    for s, g in enumerate(groups):
        for t in g:
            token_sound[t] = s
    for k, t in enumerate(ungrouped):
        token_sound[t] = cfg.n_groups + k

    prototypes = rng.normal(0.0, 1.0, (n_sounds, cfg.d_in))
    # Resample rows until every pair is at least the margin apart.
    for _ in range(1000):
        d = np.linalg.norm(prototypes[:, None] - prototypes[None, :], axis=-1)
        np.fill_diagonal(d, np.inf)
        bad = np.where(d.min(axis=1) < cfg.prototype_margin)[0]
        if bad.size == 0:
            break
        prototypes[bad[0]] = rng.normal(0.0, 1.0, cfg.d_in)
    else:
        raise ConfigError("could not separate prototypes at the configured margin")
    return HomophoneVocab(
        size=cfg.v,
        n_background=cfg.n_background,
        groups=groups,
        prototypes=prototypes,
        token_sound=token_sound,
    )


def featurize(tokens, vocab, durations, noise_sigma, rng):
    """Emit each token's group prototype for its duration, plus Gaussian noise."""
    rows = []
    for tok, dur in zip(tokens, durations):
        if dur < 1:
            raise ConfigError("token duration must be >= 1")
        proto = vocab.prototype_for(tok)
        block = np.tile(proto, (dur, 1))
        if noise_sigma > 0.0:
            block = block + rng.normal(0.0, noise_sigma, block.shape)
        rows.append(block)
    return np.concatenate(rows, axis=0).astype("<f4")


def corrupt_to_ocr(ref_tokens, cfg, vocab, rng):
    """Drop, paraphrase (non-homophone synonym ids), and append distractors.

    The kept tokens preserve reference order; a kept homophone token always
    appears verbatim or as its synonym, never as a same-group sibling.
    """
    out = []
    for tok in ref_tokens:
        if rng.random() < cfg.p_ocr_drop:
            continue
        if rng.random() < cfg.p_ocr_paraphrase:
            out.append(vocab.synonym(tok))
        else:
            out.append(int(tok))
    lo, hi = vocab.background_range
    for _ in range(cfg.n_distractors):
        out.append(int(rng.integers(lo, hi + 1)))
    return out


def gen_utterance(cfg, vocab, split, index):
    """Generate one utterance from its own derived seed (seed isolation)."""
    split_idx = SPLITS.index(split)
    rng = np.random.default_rng(
        np.random.SeedSequence([cfg.seed, split_idx + 1, index])
    )
    length = int(rng.integers(cfg.sent_len_min, cfg.sent_len_max + 1))
    ref = [int(t) for t in rng.integers(1, cfg.v + 1, length)]
    durations = [int(d) for d in rng.integers(cfg.duration_min, cfg.duration_max + 1, length)]
    audio = featurize(ref, vocab, durations, cfg.noise_sigma, rng)
    ocr = corrupt_to_ocr(ref, cfg, vocab, rng)
    return Utterance(
        uid=f"{split}-{index:05d}", ref=ref, durations=durations, audio=audio, ocr=ocr
    )


def gen_corpus(cfg):
    """Deterministic (vocab, {train, valid, test}) from the config alone."""
    vocab = build_vocab(cfg)
    sizes = {"train": cfg.n_train, "valid": cfg.n_valid, "test": cfg.n_test}
    splits = {
        split: [gen_utterance(cfg, vocab, split, i) for i in range(sizes[split])]
        for split in SPLITS
    }
    return vocab, splits


def _utterance_record(utt):
    return {
        "id": utt.uid,
        "ref": utt.ref,
        "durations": utt.durations,
        "ocr": utt.ocr,
        "frames": base64.b64encode(
            np.ascontiguousarray(utt.audio.astype("<f4")).tobytes()
        ).decode("ascii"),
    }


def _parse_record(line, record_index, d_in):
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as e:
        raise CorpusFormatError(f"invalid JSON: {e}", record=record_index) from e
    if not isinstance(rec, dict):
        raise CorpusFormatError("record is not an object", record=record_index)
    for key in ("id", "ref", "durations", "ocr", "frames"):
        if key not in rec:
            raise CorpusFormatError(f"missing field '{key}'", record=record_index)
    uid = rec["id"]
    ref, durations, ocr = rec["ref"], rec["durations"], rec["ocr"]
    for name, val in (("ref", ref), ("durations", durations), ("ocr", ocr)):
        if not isinstance(val, list) or not all(isinstance(x, int) for x in val):
            raise CorpusFormatError(f"field '{name}' is not an integer list",
                                    record=record_index)
    if not isinstance(uid, str):
        raise CorpusFormatError("field 'id' is not a string", record=record_index)
    if not ref:
        raise CorpusFormatError("empty reference", record=record_index)
    if len(durations) != len(ref) or any(d < 1 for d in durations):
        raise CorpusFormatError("durations do not match reference", record=record_index)
    try:
        raw = base64.b64decode(rec["frames"], validate=True)
    except Exception as e:
        raise CorpusFormatError(f"bad base64 frame block: {e}", record=record_index) from e
    expected = sum(durations) * d_in * 4
    if len(raw) != expected:
        raise CorpusFormatError(
            f"frame block has {len(raw)} bytes, expected {expected}",
            record=record_index,
        )
    audio = np.frombuffer(raw, dtype="<f4").reshape(sum(durations), d_in)
    return Utterance(uid=uid, ref=ref, durations=durations, audio=audio, ocr=ocr)


def write_split(path, utterances):
    with open(path, "w", encoding="utf-8") as f:
        for utt in utterances:
            f.write(json.dumps(_utterance_record(utt), sort_keys=True,
                               separators=(",", ":")))
            f.write("\n")


def read_split(path, d_in):
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for i, line in enumerate(f, start=1):
            if line.strip():
                out.append(_parse_record(line, i, d_in))
    return out


def write_corpus(out_dir, vocab, splits, cfg=None):
    """Write vocab.json plus one JSONL file per split into ``out_dir``."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    meta = {"format_version": 1, "vocab": vocab.to_json(), "d_in": vocab.d_in}
    if cfg is not None:
        meta["config"] = asdict(cfg)
    with open(os.path.join(out_dir, "vocab.json"), "w", encoding="utf-8") as f:
        json.dump(meta, f, sort_keys=True, separators=(",", ":"))
    for split, utts in splits.items():
        write_split(os.path.join(out_dir, f"{split}.jsonl"), utts)


def read_vocab(path):
    with open(path, "r", encoding="utf-8") as f:
        try:
            meta = json.load(f)
        except json.JSONDecodeError as e:
            raise CorpusFormatError(f"invalid vocab file: {e}") from e
    if meta.get("format_version") != 1:
        raise CorpusFormatError(
            f"unsupported corpus format version {meta.get('format_version')}"
        )
    return HomophoneVocab.from_json(meta["vocab"])


def read_corpus(in_dir, splits=SPLITS):
    import os

    vocab = read_vocab(os.path.join(in_dir, "vocab.json"))
    out = {}
    for split in splits:
        path = os.path.join(in_dir, f"{split}.jsonl")
        if os.path.exists(path):
            out[split] = read_split(path, vocab.d_in)
    return vocab, out
