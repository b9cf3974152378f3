"""
Command-line entry point: ``generate``, ``train``, ``eval`` and ``distances``.

Every subcommand accepts ``--config FILE`` (JSON).  Keys mirror the long flag
names with dashes replaced by underscores; ``train`` also reads nested
``architecture`` and ``train`` objects.  Explicit flags win over the file.

Exit codes: 0 success, 2 usage error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys

import numpy as np
from threadpoolctl import threadpool_limits

from . import landmarks as lm
from . import metrics as mt
from . import model as md
from . import synthdata

log = logging.getLogger("hgcnn")

CHECKPOINT_NAME = "model.hgc"
DEFAULTS = {
    "generate": {"seed": 0, "subjects": 10, "samples_per_class": 5},
    "train": {"seed": 0, "protocol": "subjects", "split_seed": 0, "model": 4,
              "dev_fraction": 0.2, "test_fraction": 0.2},
    "eval": {"split": "test", "tdr_at": "0.01,0.05,0.10,0.20", "cross": False},
    "distances": {"sample": None, "split": "test"},
}


class UsageError(Exception):
    pass


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _fractions(text):
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not vals or any(not 0.0 <= v <= 1.0 for v in vals):
        raise argparse.ArgumentTypeError(f"rates must lie in [0, 1]: {text!r}")
    return vals


def _env_threads():
    raw = os.environ.get("HGCNN_THREADS")
    if raw is None:
        return None
    try:
        return _positive_int(raw)
    except argparse.ArgumentTypeError as exc:
        raise UsageError(f"HGCNN_THREADS: {exc}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with default option values")
    common.add_argument("--threads", type=_positive_int,
                        help="BLAS thread limit (default: $HGCNN_THREADS); 1 is bitwise reproducible")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="hgcnn", description="Hypergraph face anti-spoofing toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="write a synthetic RGB-D landmark dataset")
    g.add_argument("--out", help="output directory")
    g.add_argument("--seed", type=int)
    g.add_argument("--subjects", type=_positive_int)
    g.add_argument("--samples-per-class", type=_positive_int)

    t = sub.add_parser("train", parents=[common], help="train a model on a protocol split")
    t.add_argument("--data", help="dataset directory or samples.jsonl")
    t.add_argument("--out", help="run directory (checkpoint, train_log.csv, splits.json)")
    t.add_argument("--protocol", choices=mt.PROTOCOLS)
    t.add_argument("--model", type=int, choices=(1, 2, 3, 4), help="ablation preset (4 = full)")
    t.add_argument("--seed", type=int, help="training seed")
    t.add_argument("--split-seed", type=int)
    t.add_argument("--epochs", type=_positive_int)
    t.add_argument("--batch-size", type=_positive_int)
    t.add_argument("--lr", type=float)
    t.add_argument("--patience", type=_positive_int)

    e = sub.add_parser("eval", parents=[common], help="score a dataset and report metrics")
    e.add_argument("--checkpoint", help="checkpoint file or run directory")
    e.add_argument("--data", help="dataset directory or samples.jsonl")
    e.add_argument("--out", help="report JSON path (scores go next to it as .csv)")
    e.add_argument("--split", choices=("train", "dev", "test", "all"))
    e.add_argument("--cross", action="store_true", default=None,
                   help="data come from another dataset: score all of it")
    e.add_argument("--tdr-at", help="comma-separated FDR targets")

    d = sub.add_parser("distances", parents=[common],
                       help="per-layer 68x68 feature distance matrices of one sample")
    d.add_argument("--checkpoint")
    d.add_argument("--data")
    d.add_argument("--out", help="output directory")
    d.add_argument("--sample", help="sample id (default: first sample of --split)")
    d.add_argument("--split", choices=("train", "dev", "test", "all"))
    return p


def resolve(args: argparse.Namespace) -> dict:
    """Merge built-in defaults, the JSON config file and explicit flags."""
    opts = dict(DEFAULTS.get(args.command, {}))
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}")
        if not isinstance(cfg, dict):
            raise UsageError(f"config {args.config} must hold a JSON object")
        opts.update(cfg)
    for k, v in vars(args).items():
        if v is not None and k not in ("config", "command"):
            opts[k] = v
    if opts.get("threads") is None:
        opts["threads"] = _env_threads()
    return opts


def _require(opts, *names):
    missing = [n for n in names if not opts.get(n)]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))


def _samples_path(data):
    path = os.path.join(data, "samples.jsonl") if os.path.isdir(data) else data
    if not os.path.isfile(path):
        raise UsageError(f"no dataset at {data}")
    return path


def _checkpoint_path(path):
    path = os.path.join(path, CHECKPOINT_NAME) if os.path.isdir(path) else path
    if not os.path.isfile(path):
        raise UsageError(f"no checkpoint at {path}")
    return path


def _writable_dir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {path}: {exc}")
    if not os.access(path, os.W_OK):
        raise UsageError(f"output directory {path} is not writable")
    return path


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- subcommands ------------------------------------------------------------------

def cmd_generate(opts) -> int:
    _require(opts, "out")
    out = _writable_dir(opts["out"])
    try:
        cfg = synthdata.GeneratorConfig(n_subjects=int(opts["subjects"]),
                                        samples_per_subject_per_class=int(opts["samples_per_class"]),
                                        seed=int(opts["seed"]))
    except ValueError as exc:
        raise UsageError(str(exc))
    man = synthdata.write_dataset(synthdata.generate(cfg), cfg, out)
    counts = ", ".join(f"{k} {v}" for k, v in man["counts"].items())
    print(f"wrote {man['n_samples']} samples ({counts}) for {len(man['subjects'])} subjects "
          f"to {out} [seed {cfg.seed}]")
    return 0


def _architecture(opts) -> md.ArchitectureConfig:
    overrides = opts.get("architecture") or {}
    try:
        return md.ablation_config(int(opts["model"]), **overrides)
    except TypeError as exc:
        raise UsageError(f"bad architecture option: {exc}")


def _hyperparameters(opts) -> md.TrainConfig:
    hp = dict(opts.get("train") or {})
    for key in ("epochs", "batch_size", "lr", "patience"):
        if opts.get(key) is not None:
            hp[key] = opts[key]
    try:
        return md.TrainConfig(**hp)
    except TypeError as exc:
        raise UsageError(f"bad training option: {exc}")


def _splits(samples, run):
    return mt.make_splits(samples, run["protocol"], run["split_seed"],
                          run["dev_fraction"], run["test_fraction"])


def cmd_train(opts) -> int:
    _require(opts, "data", "out")
    path = _samples_path(opts["data"])
    out = _writable_dir(opts["out"])
    if opts["protocol"] not in mt.PROTOCOLS:
        raise UsageError(f"unknown protocol {opts['protocol']!r}")
    arch = _architecture(opts)
    hp = _hyperparameters(opts)
    run = {"protocol": opts["protocol"], "split_seed": int(opts["split_seed"]),
           "dev_fraction": float(opts["dev_fraction"]), "test_fraction": float(opts["test_fraction"]),
           "seed": int(opts["seed"])}

    samples = lm.read_samples(path)
    splits = _splits(samples, run)
    _write_json(os.path.join(out, "splits.json"), {**run, "splits": mt.split_manifest(splits)})
    prepared = {k: md.prepare_samples(v, arch) for k, v in splits.items() if k != "test"}
    result = md.train(arch, prepared["train"], prepared["dev"], hp, seed=run["seed"])

    with open(os.path.join(out, "train_log.csv"), "w", newline="", encoding="utf-8") as fh:
        cols = ["epoch", "train_loss", "train_acc", "dev_loss", "dev_acc", "dev_acer"]
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in result.log:
            w.writerow([row["epoch"]] + [repr(float(row[c])) for c in cols[1:]])
    meta = {"run": run, "train": hp.to_dict(), "best_epoch": result.best_epoch,
            "threshold": {"value": result.threshold.value, "provenance": result.threshold.provenance}}
    _write_json(os.path.join(out, "config.json"),
                {"architecture": arch.to_dict(), "train": hp.to_dict(), **run})
    md.save_checkpoint(result.model, os.path.join(out, CHECKPOINT_NAME), meta)
    last = result.log[result.best_epoch - 1]
    print(f"trained {len(result.log)} epochs, best epoch {result.best_epoch} "
          f"(dev acc {last['dev_acc']:.3f}, dev ACER {last['dev_acer']:.3f}); "
          f"threshold {result.threshold.value:.6g} ({result.threshold.provenance}) -> {out}")
    return 0


def _select(samples, meta, split, cross):
    if cross or split == "all":
        return samples
    run = meta.get("run")
    if not run:
        raise UsageError("checkpoint has no split definition; use --split all or --cross")
    return _splits(samples, run)[split]


def _load(opts):
    _require(opts, "checkpoint", "data")
    ckpt = _checkpoint_path(opts["checkpoint"])
    samples = lm.read_samples(_samples_path(opts["data"]))
    model, meta = md.load_checkpoint(ckpt)
    return model, meta, samples


def cmd_eval(opts) -> int:
    _require(opts, "out")
    raw = opts["tdr_at"]
    try:
        targets = _fractions(raw if isinstance(raw, str) else ",".join(map(str, raw)))
    except argparse.ArgumentTypeError as exc:
        raise UsageError(f"--tdr-at: {exc}")
    model, meta, samples = _load(opts)
    chosen = _select(samples, meta, opts["split"], bool(opts["cross"]))
    if not chosen:
        raise UsageError(f"split {opts['split']!r} is empty")
    scores = md.predict(model, md.prepare_samples(chosen, model.cfg))
    th = meta.get("threshold")
    th = mt.Threshold(th["value"], th["provenance"]) if th else mt.Threshold(0.5, "fixed")
    rep = mt.report(scores, th, targets)
    rep["split"] = "all" if opts["cross"] else opts["split"]
    rep["cross"] = bool(opts["cross"])
    out = opts["out"]
    _writable_dir(os.path.dirname(os.path.abspath(out)))
    _write_json(out, rep)
    with open(os.path.splitext(out)[0] + ".csv", "w", newline="", encoding="utf-8") as fh:
        fh.write(scores.to_csv())
    print(f"{len(scores)} samples: ACER {rep['acer']:.4f} HTER {rep['hter']:.4f} "
          f"EER {rep['eer']:.4f} AUC {rep['auc']:.4f} at threshold {th.value:.6g} ({th.provenance})")
    return 0


def layer_distances(model: md.HGCNN, sample: lm.LandmarkSample) -> list[np.ndarray]:
    """Euclidean distance matrices between the original landmarks, per layer.

    Index 0 uses the raw input features, index i the output of convolution i
    (both branches side by side).
    """
    prep = md.prepare_samples([sample], model.cfg)[0]
    depth = prep.depth[None] if model.cfg.use_depth_branch else None
    _, feats = model.forward(prep.color[None], depth, prep.laplacian[None], return_features=True)
    out = []
    for f in feats:
        f = f[0, :lm.N_LANDMARKS]
        diff = f[:, None, :] - f[None, :, :]
        out.append(np.sqrt(np.sum(diff * diff, axis=-1)))
    return out


def cmd_distances(opts) -> int:
    _require(opts, "out")
    out = _writable_dir(opts["out"])
    model, meta, samples = _load(opts)
    if opts.get("sample"):
        chosen = [s for s in samples if s.id == opts["sample"]]
        if not chosen:
            raise UsageError(f"no sample with id {opts['sample']!r}")
    else:
        chosen = _select(samples, meta, opts["split"], False)
        if not chosen:
            raise UsageError(f"split {opts['split']!r} is empty")
    sample = chosen[0]
    for i, dm in enumerate(layer_distances(model, sample)):
        buf = io.StringIO()
        np.savetxt(buf, dm, delimiter=",", fmt="%.17g")
        with open(os.path.join(out, f"layer{i}.csv"), "w", encoding="utf-8") as fh:
            fh.write(buf.getvalue())
    print(f"wrote {i + 1} distance matrices for sample {sample.id} to {out}")
    return 0


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "distances": cmd_distances}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        opts = resolve(args)
        with threadpool_limits(limits=opts["threads"]):
            return COMMANDS[args.command](opts)
    except UsageError as exc:
        print(f"hgcnn {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, RuntimeError, FloatingPointError) as exc:
        print(f"hgcnn {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
