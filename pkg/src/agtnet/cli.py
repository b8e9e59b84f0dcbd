"""Command line entry point: ``agt {train,eval,analyze,gradcheck,synth}``.

Settings resolve as flags > ``--config`` file (flat ``key=value`` lines) >
defaults. Exit status: 0 success, 1 failed check or I/O error, 2 usage error.
"""

import argparse
import os
import sys
from dataclasses import dataclass
from typing import Any, Callable, Dict, Optional

import numpy as np

from . import analysis
from . import autodiff as ad
from .corpus import (
    PHRASES_AND_SENTENCES,
    SENTENCES_ONLY,
    UNIT_MODES,
    extract_training_units,
    generate_synthetic_corpus,
    read_treebank,
    synthetic_embeddings,
    unit_to_tree,
    write_embeddings,
)
from .estimator import AGTClassifier
from .model import EVAL, AgtNetwork, NetworkConfig, network_forward
from .training import EPOCH_LOG_HEADER, derive_seed

COMMANDS = ("train", "eval", "analyze", "gradcheck", "synth")


class UsageError(Exception):
    pass


def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _optional_int(text):
    if text is None or str(text).strip().lower() in ("", "none", "inf"):
        return None
    return int(text)


def _path(text):
    return None if text in (None, "") else str(text)


@dataclass(frozen=True)
class Option:
    parse: Callable[[Any], Any]
    default: Any
    check: Optional[Callable[[Any], bool]] = None
    help: str = ""


def _positive(v):
    return v is not None and v > 0


OPTIONS: Dict[str, Option] = {
    "layers": Option(int, 15, _positive, "number of AGT layers"),
    "hidden": Option(int, 200, _positive, "hidden width d"),
    "head_hidden": Option(_optional_int, None, lambda v: v is None or v > 0, "head hidden width (default: hidden)"),
    "batch_size": Option(int, 50, _positive, "mini-batch size"),
    "epochs": Option(int, 10, _positive, "training epochs"),
    "lr": Option(float, 0.0005, _positive, "Adadelta update scale"),
    "rho": Option(float, 0.95, lambda v: 0 < v < 1, "Adadelta decay"),
    "epsilon": Option(float, 1e-6, _positive, "Adadelta epsilon"),
    "dropout": Option(float, 0.2, lambda v: 0 <= v < 1, "dropout rate"),
    "gate_bias": Option(float, 1.0, None, "initial transform-gate bias"),
    "max_selector_layer": Option(_optional_int, None, lambda v: v is None or v >= 0,
                                 "reuse this layer's selection vector above it"),
    "mode": Option(str, PHRASES_AND_SENTENCES, lambda v: v in UNIT_MODES, "training unit mode"),
    "seed": Option(int, 0, lambda v: v >= 0, "master random seed"),
    "threshold": Option(float, 0.95, lambda v: 0 <= v <= 1, "word selection threshold"),
    "tolerance": Option(float, 1e-4, _positive, "gradcheck relative-error tolerance"),
    "train": Option(_path, None, None, "training treebank file"),
    "dev": Option(_path, None, None, "dev treebank file"),
    "test": Option(_path, None, None, "test treebank file (eval/analyze)"),
    "embeddings": Option(_path, None, None, "word vector text file"),
    "embedding_dim": Option(int, 300, _positive, "vector size when no embedding file is given"),
    "checkpoint": Option(_path, None, None, "checkpoint path"),
    "output_dir": Option(_path, "agt_out", None, "directory for logs, dumps and heatmaps"),
    "synthetic": Option(_bool, False, None, "use the synthetic negation corpus"),
    "synth_size": Option(int, 500, lambda v: v >= 10, "synthetic corpus size"),
    "synth_seed": Option(_optional_int, None, lambda v: v is None or v >= 0,
                         "synthetic corpus seed (default: derived from seed)"),
    "sentences": Option(str, "all", None, "analyze: 'all' or comma-separated sentence indices"),
}


def read_config_file(path) -> Dict[str, str]:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as e:
        raise UsageError(f"cannot read config file {path}: {e.strerror}") from None
    values = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in OPTIONS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values


def build_parser():
    parser = argparse.ArgumentParser(prog="agt", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="flat key=value file")
    for key, opt in OPTIONS.items():
        parser.add_argument(f"--{key}", default=None, help=f"{opt.help} (default: {opt.default})")
    return parser


def parse_config(argv=None):
    """Resolve flags over config-file values over defaults; returns a dict."""
    parser = build_parser()
    args = parser.parse_args(argv)
    file_values = read_config_file(args.config) if args.config else {}
    resolved = {"command": args.command}
    for key, opt in OPTIONS.items():
        raw = getattr(args, key)
        if raw is None:
            raw = file_values.get(key)
        if raw is None:
            value = opt.default
        else:
            try:
                value = opt.parse(raw)
            except (TypeError, ValueError):
                raise UsageError(f"invalid value for {key!r}: {raw!r}") from None
        if opt.check is not None and value is not None and not opt.check(value):
            raise UsageError(f"value out of range for {key!r}: {value!r}")
        resolved[key] = value
    _require_paths(resolved)
    return resolved


def _require_paths(cfg):
    cmd = cfg["command"]
    missing = []
    if cmd == "train" and not cfg["synthetic"]:
        missing = [k for k in ("train", "dev") if not cfg[k]]
    elif cmd in ("eval", "analyze"):
        missing = [k for k in ("checkpoint",) if not cfg[k]]
        if not cfg["synthetic"] and not cfg["test"]:
            missing.append("test")
    if missing:
        raise UsageError(f"command {cmd!r} requires: " + ", ".join(missing))


def format_config(cfg):
    return "\n".join(f"# {k}={'' if v is None else v}" for k, v in cfg.items())


# -- commands -----------------------------------------------------------------


def _synth_seed(cfg):
    return cfg["synth_seed"] if cfg["synth_seed"] is not None else derive_seed(cfg["seed"], "corpus")


def _synthetic_data(cfg):
    train, test = generate_synthetic_corpus(cfg["synth_size"], _synth_seed(cfg))
    return train, test


def _xy(units):
    return [list(u.tokens) for u in units], [u.label for u in units]


def _sentences(path):
    return [extract_training_units(t, SENTENCES_ONLY)[0] for t in read_treebank(path)]


def _estimator(cfg):
    embeddings = cfg["embeddings"]
    if embeddings is None and cfg["synthetic"]:
        train, test = _synthetic_data(cfg)
        embeddings = synthetic_embeddings(train + test, cfg["embedding_dim"], derive_seed(cfg["seed"], "synth-vectors"))
    return AGTClassifier(
        n_layers=cfg["layers"],
        hidden=cfg["hidden"],
        head_hidden=cfg["head_hidden"],
        dropout=cfg["dropout"],
        gate_bias=cfg["gate_bias"],
        learning_rate=cfg["lr"],
        rho=cfg["rho"],
        epsilon=cfg["epsilon"],
        batch_size=cfg["batch_size"],
        epochs=cfg["epochs"],
        max_selector_layer=cfg["max_selector_layer"],
        embeddings=embeddings,
        embedding_dim=cfg["embedding_dim"],
        random_state=cfg["seed"],
    )


def cmd_train(cfg, out):
    if cfg["synthetic"]:
        train_units, dev_units = _synthetic_data(cfg)
    else:
        train_units = [u for t in read_treebank(cfg["train"]) for u in extract_training_units(t, cfg["mode"])]
        dev_units = _sentences(cfg["dev"])
    os.makedirs(cfg["output_dir"], exist_ok=True)
    log_path = os.path.join(cfg["output_dir"], "epochs.tsv")
    checkpoint = cfg["checkpoint"] or os.path.join(cfg["output_dir"], "model.agt")

    with open(log_path, "w", encoding="utf-8", newline="\n") as log:
        print(EPOCH_LOG_HEADER, file=out)

        def on_epoch(entry):
            log.write(entry.line() + "\n")
            log.flush()
            print(entry.line(), file=out, flush=True)

        clf = _estimator(cfg)
        X, y = _xy(train_units)
        Xd, yd = _xy(dev_units)
        clf.fit(X, y, Xd, yd, on_epoch=on_epoch)
    clf.save(checkpoint)
    print(f"best_epoch\t{clf.best_epoch_}", file=out)
    print(f"checkpoint\t{checkpoint}", file=out)
    return 0


def _eval_units(cfg):
    if cfg["test"]:
        return _sentences(cfg["test"])
    return _synthetic_data(cfg)[1]


def cmd_eval(cfg, out):
    clf = AGTClassifier.load(cfg["checkpoint"])
    X, y = _xy(_eval_units(cfg))
    print(f"accuracy\t{clf.score(X, y):.4f}", file=out)
    return 0


def _requested(selection, n):
    if selection.strip().lower() == "all":
        return list(range(n))
    try:
        idx = [int(s) for s in selection.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"invalid value for 'sentences': {selection!r}") from None
    bad = [i for i in idx if not 0 <= i < n]
    if bad:
        raise UsageError(f"sentence indices out of range 0..{n - 1}: {bad}")
    return idx


def cmd_analyze(cfg, out):
    clf = AGTClassifier.load(cfg["checkpoint"])
    units = _eval_units(cfg)
    chosen = _requested(cfg["sentences"], len(units))
    units = [units[i] for i in chosen]
    X, y = _xy(units)
    records = clf.attention_records(X, y)
    threshold = cfg["threshold"]

    out_dir = cfg["output_dir"]
    heat_dir = os.path.join(out_dir, "heatmaps")
    os.makedirs(heat_dir, exist_ok=True)

    def write(name, text):
        with open(os.path.join(out_dir, name), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)

    write("records.jsonl", "".join(r.to_json() + "\n" for r in records))
    stats = analysis.phrase_length_distribution(records, threshold)
    write("phrase_lengths.tsv", analysis.phrase_histogram_tsv(stats))
    spikes = analysis.attention_spikiness(records)
    write("spikiness.tsv", analysis.spikiness_tsv(spikes))
    write("gates.tsv", analysis.gate_summary_tsv(analysis.gate_activity_summary(records)))
    top = analysis.top_selected_words(records, 0, threshold)
    write("top_words_layer1.tsv", "word\tcount\n" + "".join(f"{w}\t{c}\n" for w, c in top))

    grids = []
    compositions = []
    for i, record in zip(chosen, records):
        norm = analysis.normalize_attention(record)
        svg, text = analysis.render_heatmap(record, norm, svg_path=os.path.join(heat_dir, f"sentence_{i:05d}.svg"))
        grids.append(f"## sentence {i} gold={record.gold} pred={record.prediction}\n{text}")
        spans = analysis.select_and_compose(norm, threshold, record.tokens)
        compositions.append(f"## sentence {i}: {' '.join(record.tokens)}")
        for l in range(record.n_layers):
            strict = " | ".join(" ".join(s.text) for s in spans if s.layer == l)
            relaxed = sorted(analysis.median_relaxed_select(norm[l]))
            compositions.append(
                f"L{l + 1}\t{strict}\t{' '.join(record.tokens[j] for j in relaxed)}"
            )
    write("heatmaps.txt", "\n".join(grids))
    write("compositions.tsv", "\n".join(compositions) + "\n")

    print("layer\tmean_phrase_length\tfrac_high\tfrac_low", file=out)
    for l, s in enumerate(stats):
        print(f"{l + 1}\t{s.mean_length:.4f}\t{spikes.high[l]:.4f}\t{spikes.low[l]:.4f}", file=out)
    print(f"records\t{len(records)}", file=out)
    return 0


def gradcheck_fixture(n_layers=3, hidden=8, length=5, input_dim=6, seed=0):
    """Closure and parameters for a small deterministic gradient check.

    Two instances of lengths ``length`` and ``length - 2`` so the padding
    path is exercised too.
    """
    config = NetworkConfig(input_dim=input_dim, hidden=hidden, n_layers=n_layers, dropout=0.0)
    net = AgtNetwork.initialize(config, seed)
    rng = np.random.default_rng(seed + 1)
    embedded = rng.uniform(-1, 1, size=(2, length, input_dim))
    mask = np.ones((2, length), dtype=bool)
    mask[1, max(1, length - 2):] = False
    embedded[~mask] = 0.0
    targets = np.array([1, 3])

    def closure():
        probs, _ = network_forward(net, embedded, mask, EVAL)
        return ad.cross_entropy(probs, targets)

    return closure, net


def cmd_gradcheck(cfg, out):
    closure, net = gradcheck_fixture()
    params = net.named_parameters()
    report = ad.gradcheck(closure, list(params.values()), cfg["tolerance"], names=list(params))
    print("tensor\tmax_rel_error\tstatus", file=out)
    for line in report.lines():
        print(line, file=out)
    print(f"overall\t{'pass' if report.passed else 'FAIL'}", file=out)
    return 0 if report.passed else 1


def cmd_synth(cfg, out):
    train, test = _synthetic_data(cfg)
    out_dir = cfg["output_dir"]
    os.makedirs(out_dir, exist_ok=True)
    for name, units in (("train.txt", train), ("dev.txt", test)):
        with open(os.path.join(out_dir, name), "w", encoding="utf-8", newline="\n") as fh:
            for u in units:
                fh.write(unit_to_tree(u).render() + "\n")
    vectors = synthetic_embeddings(train + test, cfg["embedding_dim"], derive_seed(cfg["seed"], "synth-vectors"))
    write_embeddings(os.path.join(out_dir, "embeddings.txt"), vectors)
    print(f"train\t{len(train)}\ndev\t{len(test)}\nvectors\t{len(vectors)}", file=out)
    return 0


HANDLERS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "analyze": cmd_analyze,
    "gradcheck": cmd_gradcheck,
    "synth": cmd_synth,
}


def run(cfg, out=None):
    out = out or sys.stdout
    try:
        return HANDLERS[cfg["command"]](cfg, out)
    except UsageError as e:
        print(f"agt: usage error: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as e:
        print(f"agt: error: {e}", file=sys.stderr)
        return 1


def main(argv=None):
    try:
        cfg = parse_config(argv)
    except UsageError as e:
        print(f"agt: usage error: {e}", file=sys.stderr)
        return 2
    except SystemExit as e:  # argparse
        return int(e.code or 0) if e.code in (0, None) else 2
    print(format_config(cfg), file=sys.stderr)
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
