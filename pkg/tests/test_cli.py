import hashlib
import json

import numpy as np
import pytest

from vsct_spoter.cli import main
from vsct_spoter.pose_data import Dataset, GlossVocabulary, load_dataset, save_dataset
from vsct_spoter.synthetic import make_synthetic_dataset

from conftest import random_sequence

TINY = ["--encoder-layers", "1", "--decoder-layers", "1", "--ff-dim", "32", "--max-frames", "16",
        "--init-mode", "standard"]


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    save_dataset(make_synthetic_dataset(3, 2, seed=0, frames=6, noise=0.5), root / "train.jsonl")
    save_dataset(make_synthetic_dataset(3, 1, seed=1, frames=6, noise=0.5), root / "val.jsonl")
    return root


@pytest.fixture(scope="module")
def trained(files):
    out = files / "run"
    code = main(["train", "--train-data", str(files / "train.jsonl"), "--out", str(out), "--epochs", "80",
                 "--no-augmentation", *TINY])
    assert code == 0
    return out


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _metrics(path):
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    for r in rows:
        r.pop("seconds")
    return rows


def test_train_writes_run_directory(trained):
    for name in ("config.resolved", "metrics.jsonl", "checkpoint.sptr", "summary.json"):
        assert (trained / name).is_file()
    summary = json.loads((trained / "summary.json").read_text())
    assert summary["epochs"] == 80 and summary["train_top1"] == 1.0
    assert "use_augmentation = false" in (trained / "config.resolved").read_text()
    assert len(_metrics(trained / "metrics.jsonl")) == 80


def test_train_twice_identical_metrics(files, tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("epochs = 3  # short\nencoder_layers = 1\ndecoder_layers = 1\nff_dim = 32\nmax_frames = 16\n")
    runs = []
    for name in ("a", "b"):
        args = ["train", "--train-data", str(files / "train.jsonl"), "--val-data", str(files / "val.jsonl"),
                "--config", str(cfg), "--seed", "7", "--vsct", "--out", str(tmp_path / name)]
        assert main(args) == 0
        runs.append(_metrics(tmp_path / name / "metrics.jsonl"))
    assert runs[0] == runs[1]
    assert all(r["vsct_selected"] for r in runs[0])


def test_config_flags_override_file(files, tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("epochs = 50\nencoder_layers = 1\ndecoder_layers = 1\nff_dim = 32\nmax_frames = 16\n")
    out = tmp_path / "r"
    assert main(["train", "--train-data", str(files / "train.jsonl"), "--config", str(cfg), "--epochs", "1",
                 "--out", str(out)]) == 0
    assert "epochs = 1\n" in (out / "config.resolved").read_text()


def test_vsct_without_val_warns(files, tmp_path, capsys):
    code = main(["train", "--train-data", str(files / "train.jsonl"), "--out", str(tmp_path / "r"),
                 "--epochs", "1", "--vsct", *TINY])
    assert code == 0
    assert "training split" in capsys.readouterr().err


@pytest.mark.parametrize("extra", [
    ["--vsct-gamma", "1.5"],
    ["--vsct-tau", "0"],
    ["--epochs", "0"],
    ["--heads", "5"],
    ["--val-data", "/nonexistent.jsonl"],
])
def test_train_config_errors_exit_2(files, tmp_path, extra, capsys):
    code = main(["train", "--train-data", str(files / "train.jsonl"), "--out", str(tmp_path / "r"), *extra])
    assert code == 2
    assert "error" in capsys.readouterr().err
    assert not (tmp_path / "r").exists()


def test_bad_boolean_in_config_exit_2(files, tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("use_vsct = maybe\n")
    args = ["train", "--train-data", str(files / "train.jsonl"), "--config", str(cfg), "--out", str(tmp_path / "r")]
    assert main(args) == 2
    cfg.write_text("no_such_key = 1\n")
    assert main(args) == 2


def test_train_missing_required(tmp_path):
    assert main(["train", "--out", str(tmp_path)]) == 2
    with pytest.raises(SystemExit) as e:
        main(["train", "--bogus"])
    assert e.value.code == 2


def test_eval_perfect_model(trained, files, capsys, tmp_path):
    report = tmp_path / "r.json"
    code = main(["eval", "--model", str(trained / "checkpoint.sptr"), "--data", str(files / "train.jsonl"),
                 "--json", str(report)])
    assert code == 0
    out = capsys.readouterr().out
    assert "top-1: 1.0000" in out and "top-3: 1.0000" in out
    assert json.loads(report.read_text())["accuracy"]["1"] == 1.0


def _eval_json(trained, data, tmp_path, *extra):
    report = tmp_path / "r.json"
    assert main(["eval", "--model", str(trained / "checkpoint.sptr"), "--data", str(data),
                 "-k", "1", "2", "--json", str(report), *extra]) == 0
    return json.loads(report.read_text())


def test_eval_identity_mapping(trained, files, tmp_path):
    mapping = tmp_path / "id.tsv"
    mapping.write_text("".join(f"class_{k:03d}\tclass_{k:03d}\n" for k in range(3)))
    plain = _eval_json(trained, files / "val.jsonl", tmp_path)
    mapped = _eval_json(trained, files / "val.jsonl", tmp_path, "--mapping", str(mapping))
    assert plain == mapped


def test_eval_permutation_mapping(trained, files, tmp_path):
    data = load_dataset(files / "val.jsonl")
    order = [2, 0, 1]
    vocab = GlossVocabulary(tuple(f"alias_{k}" for k in order))
    renamed = Dataset(vocab, tuple(s.with_label(order.index(s.gloss_id)) for s in data.sequences))
    save_dataset(renamed, tmp_path / "renamed.jsonl")
    mapping = tmp_path / "perm.tsv"
    mapping.write_text("# data gloss -> model gloss\n" + "".join(f"alias_{k}\tclass_{k:03d}\n" for k in range(3)))
    plain = _eval_json(trained, files / "val.jsonl", tmp_path)
    mapped = _eval_json(trained, tmp_path / "renamed.jsonl", tmp_path, "--mapping", str(mapping))
    assert plain["accuracy"] == mapped["accuracy"]
    reversed_map = tmp_path / "rev.tsv"
    reversed_map.write_text("".join(f"class_{k:03d}\talias_{k}\n" for k in range(3)))
    again = _eval_json(trained, tmp_path / "renamed.jsonl", tmp_path, "--mapping", str(reversed_map),
                       "--mapping-direction", "model-to-data")
    assert again["accuracy"] == plain["accuracy"]


def test_eval_vocabulary_mismatch_exit_2(trained, tmp_path, capsys):
    vocab = GlossVocabulary(("zebra", "yak"))
    rng = np.random.default_rng(0)
    save_dataset(Dataset(vocab, (random_sequence(rng, 4, 0), random_sequence(rng, 4, 1))), tmp_path / "o.jsonl")
    assert main(["eval", "--model", str(trained / "checkpoint.sptr"), "--data", str(tmp_path / "o.jsonl")]) == 2
    assert "zebra" in capsys.readouterr().err


def test_eval_bad_inputs_exit_2(trained, files, tmp_path):
    junk = tmp_path / "junk.sptr"
    junk.write_bytes(b"nope")
    assert main(["eval", "--model", str(junk), "--data", str(files / "val.jsonl")]) == 2
    assert main(["eval", "--model", str(trained / "checkpoint.sptr"), "--data", str(files / "val.jsonl"),
                 "-k", "4"]) == 2


def test_stats_toy_file(tmp_path, capsys):
    rng = np.random.default_rng(0)
    vocab = GlossVocabulary(("a", "b"))
    seqs = (random_sequence(rng, 3, 0, signer=0), random_sequence(rng, 3, 0, signer=1),
            random_sequence(rng, 3, 0, signer=1), random_sequence(rng, 3, 1, signer=0))
    save_dataset(Dataset(vocab, seqs), tmp_path / "t.jsonl")
    assert main(["stats", str(tmp_path / "t.jsonl"), "--json", str(tmp_path / "s.json")]) == 0
    out = capsys.readouterr().out
    assert "4 sequences / 2 classes / 2 signers" in out
    assert "mean repetitions per class: 2.00" in out
    st = json.loads((tmp_path / "s.json").read_text())
    assert st["repetition_histogram"] == {"1": 1, "3": 1}


def test_stats_empty_file_exit_2(tmp_path):
    (tmp_path / "e.jsonl").write_text("")
    assert main(["stats", str(tmp_path / "e.jsonl")]) == 2
    assert main(["stats", str(tmp_path / "missing.jsonl")]) == 2


def test_selftest(capsys):
    assert main(["selftest", "--op", "softmax", "--op", "relu"]) == 0
    out = capsys.readouterr().out
    assert "softmax" in out and "relu" in out and "matmul" not in out
    assert main(["selftest", "--op", "matmul", "--tol", "1e-30"]) == 1
    assert "failing: matmul" in capsys.readouterr().out
    assert main(["selftest", "--op", "nope"]) == 2


@pytest.mark.slow
def test_selftest_full_suite():
    assert main(["selftest"]) == 0


def test_map_command_leaves_input_untouched(files, tmp_path):
    src = files / "val.jsonl"
    before = _digest(src)
    mapping = tmp_path / "m.tsv"
    mapping.write_text("class_000\tfoo\nclass_001\tbar\n")
    out = tmp_path / "mapped.jsonl"
    assert main(["map", "--data", str(src), "--mapping", str(mapping), "--out", str(out), "--drop-unmapped"]) == 0
    assert _digest(src) == before
    mapped = load_dataset(out)
    assert mapped.vocabulary.id_to_gloss == ("foo", "bar")
    assert len(mapped) == 2
