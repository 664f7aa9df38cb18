import json

import pytest

from rnnt_lab.cli import main
from rnnt_lab.harness import ExperimentConfig
from rnnt_lab.model import ModelConfig


@pytest.fixture
def config_path(tmp_path):
    model = ModelConfig(input_dim=4, stack_factor=2, stack_stride=2, encoder_layers=1,
                        prediction_layers=1, hidden=10, projection=6, vocab_size=5)
    cfg = ExperimentConfig(model=model, seed=5, num_train=4, num_test=2,
                           words_per_utt=(1, 2), pieces_per_word=(1, 2), noise=0.1,
                           pretrain_epochs=1, train_epochs=1, batch_size=2,
                           beam_width=2, arms=("random",))
    path = tmp_path / "cfg.json"
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh)
    return str(path)


def test_gen_corpus_writes_files(tmp_path, config_path, capsys):
    rc = main(["gen-corpus", "--config", config_path, "--out-dir", str(tmp_path / "c")])
    assert rc == 0
    assert (tmp_path / "c" / "train.jsonl").exists()
    assert (tmp_path / "c" / "test.jsonl").exists()


def test_pretrain_train_decode_delay_pipeline(tmp_path, config_path):
    corpus_dir = tmp_path / "c"
    assert main(["gen-corpus", "--config", config_path, "--out-dir", str(corpus_dir)]) == 0
    train_jsonl = str(corpus_dir / "train.jsonl")
    test_jsonl = str(corpus_dir / "test.jsonl")

    ckpt = str(tmp_path / "y2.json")
    assert main(["pretrain", "--variant", "y2", "--config", config_path,
                 "--corpus", train_jsonl, "--out", ckpt]) == 0
    manifest = json.loads((tmp_path / "y2.json.manifest.json").read_text())
    assert manifest["variant"] == "y2"
    assert manifest["epochs"] == 1
    assert "corpus_hash" in manifest and "final_loss" in manifest

    trained = str(tmp_path / "trained.json")
    assert main(["train", "--config", config_path, "--corpus", train_jsonl,
                 "--init", ckpt, "--out", trained]) == 0

    nbest = str(tmp_path / "nbest.jsonl")
    assert main(["decode", "--checkpoint", trained, "--corpus", test_jsonl,
                 "--beam", "2", "--out", nbest]) == 0
    lines = [json.loads(l) for l in open(nbest)]
    assert lines and {"utt_id", "hyp_tokens", "log_prob", "emit_frames"} <= set(lines[0])

    delay_csv = str(tmp_path / "delay.csv")
    assert main(["delay-stats", "--nbest", nbest, "--corpus", test_jsonl,
                 "--out", delay_csv]) == 0
    text = open(delay_csv).read().splitlines()
    assert text[0] == "bin,count"
    assert any(line.startswith("mean,") for line in text)


def test_train_from_random_init(tmp_path, config_path):
    corpus_dir = tmp_path / "c"
    main(["gen-corpus", "--config", config_path, "--out-dir", str(corpus_dir)])
    out = str(tmp_path / "random.json")
    assert main(["train", "--config", config_path,
                 "--corpus", str(corpus_dir / "train.jsonl"),
                 "--init", "random", "--out", out]) == 0
    payload = json.loads(open(out).read())
    assert payload["format"] == "rnnt-lab-checkpoint"
    assert "train_losses" in payload["extra"]


def test_experiment_subcommand(tmp_path, config_path):
    out_dir = tmp_path / "exp"
    assert main(["experiment", "--config", config_path, "--out-dir", str(out_dir)]) == 0
    assert (out_dir / "metrics.csv").exists()
    assert (out_dir / "summary.json").exists()


def test_rejected_precondition_exits_nonzero(tmp_path, config_path, capsys):
    # corpus file does not exist
    rc = main(["pretrain", "--variant", "y1", "--config", config_path,
               "--corpus", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path / "x.json")])
    assert rc != 0
    assert "error:" in capsys.readouterr().err


def test_bad_config_exits_nonzero(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    with open(bad, "w") as fh:
        json.dump({"model": {"vocab_size": 1}}, fh)
    rc = main(["gen-corpus", "--config", str(bad), "--out-dir", str(tmp_path / "c")])
    assert rc != 0
