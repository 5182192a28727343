"""End-to-end command-line pipeline on a miniature corpus."""

import json

import numpy as np
import pytest

from mmasr.cli import run_cli
from mmasr.train import load_checkpoint, save_checkpoint

CONFIG = {
    "corpus": {
        "v": 6, "n_groups": 1, "group_size": 2, "n_background": 3,
        "d_in": 4, "duration_min": 2, "duration_max": 3,
        "noise_sigma": 0.2, "p_ocr_drop": 0.2, "p_ocr_paraphrase": 0.1,
        "n_distractors": 2, "sent_len_min": 2, "sent_len_max": 3,
        "n_train": 12, "n_valid": 4, "n_test": 4, "seed": 13,
    },
    "encoder": {"n_blocks": 1, "n_heads": 2, "d_model": 8, "d_ff": 12,
                "conv_width": 3, "subsample_factor": 2},
    "decoder": {"n_blocks": 1, "n_heads": 2, "d_model": 8, "d_ff": 12},
    "train_stage1": {"stage": "audio_only", "max_steps": 4, "batch_size": 2,
                     "peak_lr": 2e-3, "seed": 0},
    "train_stage2": {"stage": "fusion", "freeze_encoder": True, "max_steps": 4,
                     "batch_size": 2, "peak_lr": 2e-3, "seed": 1},
}


@pytest.fixture()
def workspace(tmp_path):
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps(CONFIG))
    return tmp_path, str(cfg_path)


def _pipeline(tmp_path, cfg_path):
    data = str(tmp_path / "corpus")
    out = str(tmp_path / "run")
    assert run_cli(["gen-data", "--config", cfg_path, "--out", data]) == 0
    assert run_cli(["train", "--config", cfg_path, "--stage", "1",
                    "--data", data, "--out", out]) == 0
    assert run_cli(["train", "--config", cfg_path, "--stage", "2",
                    "--data", data, "--out", out,
                    "--stage1-ckpt", f"{out}/stage1.ckpt"]) == 0
    return data, out


def test_no_arguments_is_usage_error(capsys):
    assert run_cli([]) == 1
    capsys.readouterr()


def test_help_exits_zero(capsys):
    assert run_cli(["--help"]) == 0
    capsys.readouterr()


def test_unknown_config_key_rejected(tmp_path, capsys):
    bad = dict(CONFIG)
    bad["corpus"] = dict(CONFIG["corpus"], typo_key=1)
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(bad))
    assert run_cli(["gen-data", "--config", str(p), "--out", str(tmp_path / "c")]) == 2
    assert "typo_key" in capsys.readouterr().err


def test_unknown_section_rejected(tmp_path, capsys):
    bad = dict(CONFIG, extra_section={})
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(bad))
    assert run_cli(["gen-data", "--config", str(p), "--out", str(tmp_path / "c")]) == 2
    capsys.readouterr()


def test_gen_data_is_byte_deterministic(workspace, capsys):
    tmp_path, cfg_path = workspace
    for name in ("c1", "c2"):
        assert run_cli(["gen-data", "--config", cfg_path,
                        "--out", str(tmp_path / name)]) == 0
    for f in ("vocab.json", "train.jsonl", "valid.jsonl", "test.jsonl"):
        assert (tmp_path / "c1" / f).read_bytes() == (tmp_path / "c2" / f).read_bytes()
    capsys.readouterr()


def test_stage2_requires_stage1_checkpoint(workspace, capsys):
    tmp_path, cfg_path = workspace
    data = str(tmp_path / "corpus")
    assert run_cli(["gen-data", "--config", cfg_path, "--out", data]) == 0
    assert run_cli(["train", "--config", cfg_path, "--stage", "2",
                    "--data", data, "--out", str(tmp_path / "run")]) == 2
    capsys.readouterr()


def test_full_pipeline_and_reports(workspace, capsys):
    tmp_path, cfg_path = workspace
    data, out = _pipeline(tmp_path, cfg_path)
    hyp = str(tmp_path / "hyp.jsonl")
    assert run_cli(["decode", "--ckpt", f"{out}/stage2.ckpt", "--corpus", data,
                    "--split", "test", "--beam", "2", "--out", hyp]) == 0
    records = [json.loads(l) for l in open(hyp)]
    assert len(records) == CONFIG["corpus"]["n_test"]
    assert all(set(r) == {"id", "tokens", "log_prob"} for r in records)
    report_path = str(tmp_path / "report.json")
    assert run_cli(["eval", "--ref", f"{data}/test.jsonl", "--hyp", hyp,
                    "--vocab", f"{data}/vocab.json", "--out", report_path]) == 0
    report = json.load(open(report_path))
    assert set(report) == {"overall", "breakdown", "utterances"}
    assert set(report["overall"]) == {"S", "D", "I", "N", "wer"}
    assert report["overall"]["N"] == sum(u["N"] for u in report["utterances"])
    capsys.readouterr()


def test_eval_of_references_against_themselves_is_zero(workspace, capsys):
    tmp_path, cfg_path = workspace
    data = str(tmp_path / "corpus")
    assert run_cli(["gen-data", "--config", cfg_path, "--out", data]) == 0
    hyp = tmp_path / "perfect.jsonl"
    with open(f"{data}/test.jsonl") as f, open(hyp, "w") as g:
        for line in f:
            rec = json.loads(line)
            g.write(json.dumps({"id": rec["id"], "tokens": rec["ref"],
                                "log_prob": 0.0}) + "\n")
    report_path = str(tmp_path / "report.json")
    assert run_cli(["eval", "--ref", f"{data}/test.jsonl", "--hyp", str(hyp),
                    "--vocab", f"{data}/vocab.json", "--out", report_path]) == 0
    report = json.load(open(report_path))
    assert report["overall"]["wer"] == 0.0
    assert report["overall"]["S"] == 0
    capsys.readouterr()


def test_eval_missing_hypothesis_is_data_error(workspace, capsys):
    tmp_path, cfg_path = workspace
    data = str(tmp_path / "corpus")
    assert run_cli(["gen-data", "--config", cfg_path, "--out", data]) == 0
    hyp = tmp_path / "short.jsonl"
    hyp.write_text("")
    assert run_cli(["eval", "--ref", f"{data}/test.jsonl", "--hyp", str(hyp),
                    "--vocab", f"{data}/vocab.json",
                    "--out", str(tmp_path / "r.json")]) == 2
    capsys.readouterr()


def test_audio_modality_equals_zeroed_visual_branch(workspace, capsys):
    tmp_path, cfg_path = workspace
    data, out = _pipeline(tmp_path, cfg_path)
    audio_hyp = str(tmp_path / "audio.jsonl")
    assert run_cli(["decode", "--ckpt", f"{out}/stage2.ckpt", "--corpus", data,
                    "--modality", "audio", "--out", audio_hyp]) == 0
    # zero the visual value/output projections, keep everything else
    model, opt, step, rng_state = load_checkpoint(f"{out}/stage2.ckpt")
    for block in model.decoder.blocks:
        block.cross.visual_branch.w_v.data[:] = 0.0
        block.cross.visual_branch.w_o.data[:] = 0.0
    ablated = str(tmp_path / "ablated.ckpt")
    save_checkpoint(ablated, model, opt, step)
    ablated_hyp = str(tmp_path / "ablated.jsonl")
    assert run_cli(["decode", "--ckpt", ablated, "--corpus", data,
                    "--modality", "audio+visual", "--out", ablated_hyp]) == 0
    assert open(audio_hyp, "rb").read() == open(ablated_hyp, "rb").read()
    capsys.readouterr()


def test_training_is_deterministic_end_to_end(workspace, capsys):
    tmp_path, cfg_path = workspace
    data = str(tmp_path / "corpus")
    assert run_cli(["gen-data", "--config", cfg_path, "--out", data]) == 0
    outputs = []
    for name in ("r1", "r2"):
        out = str(tmp_path / name)
        assert run_cli(["train", "--config", cfg_path, "--stage", "1",
                        "--data", data, "--out", out]) == 0
        outputs.append(out)
    a, b = outputs
    assert open(f"{a}/stage1.ckpt", "rb").read() == open(f"{b}/stage1.ckpt", "rb").read()
    assert open(f"{a}/stage1.log").read() == open(f"{b}/stage1.log").read()
    capsys.readouterr()


def test_decode_missing_split_is_data_error(workspace, capsys):
    tmp_path, cfg_path = workspace
    data, out = _pipeline(tmp_path, cfg_path)
    assert run_cli(["decode", "--ckpt", f"{out}/stage2.ckpt", "--corpus", data,
                    "--split", "nonexistent", "--out", str(tmp_path / "h.jsonl")]) == 2
    capsys.readouterr()


def test_grad_check_command(capsys):
    assert run_cli(["grad-check", "--cases", "1", "--seed", "0"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out
    assert "FAIL" not in out
