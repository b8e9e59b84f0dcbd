import json
import os

import pytest

from agtnet import AGTClassifier
from agtnet.cli import main, parse_config, UsageError
from agtnet.corpus import TrainingUnit, read_treebank, unit_to_tree

TINY = ["--synthetic", "true", "--synth_size", "40", "--layers", "2", "--hidden", "8",
        "--embedding_dim", "8", "--epochs", "2", "--batch_size", "8", "--lr", "1.0"]


def train_tiny(tmp_path, name="run", extra=()):
    out = tmp_path / name
    assert main(["train", *TINY, "--output_dir", str(out), *extra]) == 0
    return out


@pytest.fixture
def trained(tmp_path):
    return train_tiny(tmp_path)


def test_defaults(tmp_path):
    cfg = parse_config(["train", "--train", "a", "--dev", "b"])
    assert (cfg["layers"], cfg["hidden"], cfg["batch_size"]) == (15, 200, 50)
    assert (cfg["lr"], cfg["dropout"], cfg["gate_bias"], cfg["threshold"]) == (0.0005, 0.2, 1.0, 0.95)


def test_flag_overrides_config_file(tmp_path):
    conf = tmp_path / "c.conf"
    conf.write_text("layers=15\nhidden=16  # comment\n", encoding="utf-8")
    cfg = parse_config(["train", "--synthetic", "1", "--config", str(conf), "--layers", "3"])
    assert cfg["layers"] == 3 and cfg["hidden"] == 16


def test_dropout_range_error(capsys):
    assert main(["train", "--synthetic", "1", "--dropout", "1.5"]) == 2
    assert "dropout" in capsys.readouterr().err


@pytest.mark.parametrize("body", ["bogus=1\n", "layers\n"])
def test_config_file_errors(tmp_path, body):
    conf = tmp_path / "c.conf"
    conf.write_text(body, encoding="utf-8")
    with pytest.raises(UsageError):
        parse_config(["train", "--synthetic", "1", "--config", str(conf)])


def test_unreadable_config_file(tmp_path):
    assert main(["train", "--synthetic", "1", "--config", str(tmp_path / "missing")]) == 2


def test_missing_required_paths(capsys):
    assert main(["train"]) == 2
    assert "train" in capsys.readouterr().err
    assert main(["eval", "--synthetic", "1"]) == 2


def test_unknown_flag_is_usage_error():
    assert main(["train", "--nonsense", "3"]) == 2


def test_resolved_config_is_printed(capsys):
    main(["gradcheck"])
    err = capsys.readouterr().err
    assert "# layers=15" in err and "# threshold=0.95" in err


def test_gradcheck_command(capsys):
    assert main(["gradcheck"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[-1] == "overall\tpass"
    rows = [l.split("\t") for l in lines[1:-1]]
    assert rows and all(float(r[1]) <= 1e-4 for r in rows)


def test_train_outputs(trained, capsys):
    assert (trained / "model.agt").exists()
    log = (trained / "epochs.tsv").read_text().splitlines()
    assert len(log) == 2 and log[0].startswith("1\t")


def test_missing_input_file_exits_one(tmp_path):
    assert main(["train", "--train", str(tmp_path / "nope"), "--dev", str(tmp_path / "nope")]) == 1


def test_eval_prints_four_decimals(trained, tmp_path, capsys):
    clf = AGTClassifier.load(trained / "model.agt")
    sentences = [["the", "film", "was", "good"], ["the", "cake", "was", "not", "bad"]]
    preds = clf.predict(sentences)
    test = tmp_path / "test.txt"
    test.write_text("".join(unit_to_tree(TrainingUnit(tuple(s), int(p))).render() + "\n"
                            for s, p in zip(sentences, preds)), encoding="utf-8")
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(trained / "model.agt"), "--test", str(test)]) == 0
    assert capsys.readouterr().out == "accuracy\t1.0000\n"


def test_analyze_single_sentence(trained, tmp_path):
    out = tmp_path / "analysis"
    code = main(["analyze", *TINY, "--checkpoint", str(trained / "model.agt"),
                 "--output_dir", str(out), "--sentences", "3"])
    assert code == 0
    assert os.listdir(out / "heatmaps") == ["sentence_00003.svg"]
    dump = (out / "records.jsonl").read_text(encoding="utf-8").splitlines()
    assert len(dump) == 1
    assert set(json.loads(dump[0])) == {"tokens", "attention", "gate_mean", "prediction", "gold"}
    for name in ("phrase_lengths.tsv", "spikiness.tsv", "gates.tsv", "compositions.tsv", "heatmaps.txt"):
        assert (out / name).stat().st_size > 0


def test_analyze_bad_sentence_index(trained, tmp_path):
    code = main(["analyze", *TINY, "--checkpoint", str(trained / "model.agt"),
                 "--output_dir", str(tmp_path / "a"), "--sentences", "999"])
    assert code == 2


def test_synth_command_round_trips(tmp_path):
    out = tmp_path / "synth"
    assert main(["synth", "--synth_size", "50", "--embedding_dim", "4", "--output_dir", str(out)]) == 0
    assert len(read_treebank(out / "train.txt")) == 40
    assert len(read_treebank(out / "dev.txt")) == 10
    first = (out / "embeddings.txt").read_text().splitlines()[0].split()
    assert len(first) == 5


def test_train_from_files_matches_generated_corpus(tmp_path):
    data = tmp_path / "synth"
    main(["synth", "--synth_size", "40", "--embedding_dim", "8", "--output_dir", str(data)])
    run = tmp_path / "files"
    code = main(["train", "--train", str(data / "train.txt"), "--dev", str(data / "dev.txt"),
                 "--embeddings", str(data / "embeddings.txt"), *TINY[4:], "--mode", "sentences_only",
                 "--output_dir", str(run)])
    assert code == 0 and (run / "model.agt").exists()


def test_train_is_byte_identical(tmp_path):
    a = train_tiny(tmp_path, "a", ["--dropout", "0.2"])
    b = train_tiny(tmp_path, "b", ["--dropout", "0.2"])
    assert (a / "model.agt").read_bytes() == (b / "model.agt").read_bytes()
    strip = lambda p: [l.rsplit("\t", 1)[0] for l in (p / "epochs.tsv").read_text().splitlines()]
    assert strip(a) == strip(b)
