"""Command-line interface: ``labdx <command> [options]``.

Commands write a plain-text report and a structured JSON file next to each
other; both carry the run's config hash and seed.  Exit codes: 0 success,
2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from .config import REFERENCE_RESULTS, ConfigError, RunConfig, load_config_file
from .data import (DataError, NormStats, Schema, apply_normalization, fit_normalization, ingest_events,
                   load_dataset, missing_rate, read_events_csv, read_labels_csv, save_dataset, split_dataset)
from .imputation import HEURISTICS, ModelImputer, evaluate_imputation
from .metrics import MetricsReport, format_mean_std, paired_t_test
from .models import ArchitectureMismatch, build_model, config_hash, load_checkpoint, wrap_features
from .numcore import NonFiniteError, load_arrays, save_arrays
from .synth import SynthConfig, synth_generate
from .training import evaluate, features, fit, load_training_state, save_training_checkpoint, train_model

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
DATASET_FILE, MANIFEST_FILE = "dataset.jsonl", "manifest.json"
METRIC_NAMES = {"micro_f1": "Micro-F1", "macro_f1": "Macro-F1", "macro_f1_w": "Macro-F1-w",
                "micro_auc": "Micro-AUC", "macro_auc": "Macro-AUC", "macro_auc_w": "Macro-AUC-w"}

log = logging.getLogger("labdx")


# ---------------------------------------------------------------------------
# small I/O helpers


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _emit(prefix, text: str, payload: dict) -> None:
    """Print ``text`` and, given an output prefix, store ``.txt`` and ``.json`` files."""
    text = "\n".join(line.rstrip() for line in text.split("\n"))
    sys.stdout.write(text)
    if prefix:
        prefix = Path(prefix)
        _write(prefix.with_name(prefix.name + ".txt"), text)
        _write(prefix.with_name(prefix.name + ".json"), _dump_json(payload))


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


def _dataset_file(data: str) -> Path:
    if not data:
        raise ConfigError("no dataset given (use --data)")
    path = Path(data)
    return path / DATASET_FILE if path.is_dir() else path


def load_data(data: str):
    path = _dataset_file(data)
    if not path.exists():
        raise DataError(f"dataset not found: {path}")
    seqs = load_dataset(path)
    if not seqs:
        raise DataError(f"dataset {path} is empty")
    return seqs, _file_digest(path)


def _label(cfg: RunConfig) -> str:
    return cfg.model + ("-unsup" if cfg.disc_weight == 0 else "")


def _footer(protocols) -> str:
    lines = ["", "reference (published MIMIC-III results, not reproducible here):"]
    for arch, value in REFERENCE_RESULTS["diagnosis_micro_f1"].items():
        lines.append(f"  {arch:<8} micro-F1 {value}")
    lines += sorted(set(protocols))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# configuration


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON or YAML file with run settings; flags override it")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name == "split_seeds":
            p.add_argument(flag, type=_int_list, default=None)
        elif f.name in ("model", "data"):
            p.add_argument(flag, default=None)
        else:
            p.add_argument(flag, type=type(f.default), default=None)


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def run_config(args) -> RunConfig:
    base = load_config_file(args.config) if getattr(args, "config", None) else {}
    for f in fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            base[f.name] = value
    return RunConfig.from_dict(base)


# ---------------------------------------------------------------------------
# dataset commands


def cmd_synth(args) -> int:
    overrides = load_config_file(args.synth_config) if args.synth_config else {}
    for name in ("n_episodes", "n_classes", "n_tests", "missing_rate"):
        if getattr(args, name) is not None:
            overrides[name] = getattr(args, name)
    known = {f.name for f in fields(SynthConfig)}
    if set(overrides) - known:
        raise ConfigError(f"unknown generator settings: {sorted(set(overrides) - known)}")
    synth = SynthConfig(**overrides)
    seqs = synth_generate(synth, args.seed)
    out = Path(args.out)
    save_dataset(seqs, out / DATASET_FILE)
    params = synth.to_dict()
    manifest = {
        "kind": "dataset", "source": "synthetic", "generator": params, "seed": args.seed,
        "config_hash": config_hash({"generator": params, "seed": args.seed}),
        "n_episodes": len(seqs), "missing_rate": round(missing_rate(seqs), 6),
        "class_counts": np.bincount([s.label for s in seqs], minlength=synth.n_classes).tolist(),
        "dataset_sha256": _file_digest(out / DATASET_FILE),
    }
    _write(out / MANIFEST_FILE, _dump_json(manifest))
    print(f"wrote {len(seqs)} episodes to {out} (missing rate {manifest['missing_rate']:.3f}, "
          f"config {manifest['config_hash']}, seed {args.seed})")
    return EXIT_OK


def cmd_ingest(args) -> int:
    schema = Schema.from_dict(load_config_file(args.schema))
    labels = read_labels_csv(args.labels)
    seqs, report = ingest_events(read_events_csv(args.events), schema, labels)
    if not seqs:
        raise DataError("no episode with at least two observed days")
    out = Path(args.out)
    save_dataset(seqs, out / DATASET_FILE)
    schema_dict = {"n_tests": schema.n_tests, "categorical": {str(k): v for k, v in schema.categorical.items()}}
    manifest = {
        "kind": "dataset", "source": "ingested", "schema": schema_dict, "seed": None,
        "config_hash": config_hash({"schema": schema_dict, "events": _file_digest(Path(args.events)),
                                    "labels": _file_digest(Path(args.labels))}),
        "n_episodes": report.n_episodes, "dropped_short": report.dropped_short,
        "test_frequency": {str(k): v for k, v in report.test_frequency.items()},
        "missing_rate": round(missing_rate(seqs), 6), "dataset_sha256": _file_digest(out / DATASET_FILE),
    }
    _write(out / MANIFEST_FILE, _dump_json(manifest))
    print(f"ingested {report.n_episodes} episodes ({len(report.dropped_short)} dropped as too short) "
          f"into {out} (config {manifest['config_hash']})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# training and evaluation


def _splits(seqs, split_seed: int, stats: NormStats):
    sp = split_dataset(seqs, split_seed)
    norm = lambda part: [apply_normalization(s, stats) for s in part]
    return norm(sp.train), norm(sp.dev), norm(sp.test)


def cmd_train(args) -> int:
    cfg = run_config(args)
    seqs, digest = load_data(cfg.data)
    stats = fit_normalization(split_dataset(seqs, cfg.split_seed).train)
    train, dev, _ = _splits(seqs, cfg.split_seed, stats)
    n_classes = 1 + max(s.label for s in seqs)
    model = build_model(cfg.model, seqs[0].M, n_classes, cfg.hidden_dim, cfg.latent_dim, cfg.seed)
    state = None
    if args.resume:
        _, meta = load_arrays(args.resume)
        if meta.get("arch") != cfg.model:
            raise ArchitectureMismatch(f"cannot resume a {meta.get('arch')} checkpoint as {cfg.model}")
        state = load_training_state(args.resume, model, cfg)
    out = Path(args.out)
    log_path = out.with_name(out.name + ".log.jsonl")
    lines = [json.dumps(r, sort_keys=True) for r in (state.history if state else [])]

    def on_epoch(rec, st):
        lines.append(json.dumps(rec, sort_keys=True))
        log.info("epoch %d loss %.4f ld %.4f lg %.4f", rec["epoch"], rec["loss"], rec["ld"], rec["lg"])

    state = train_model(model, train, dev, cfg, state, on_epoch)
    extra = {"split_seed": cfg.split_seed, "norm_stats": stats.to_dict(), "dataset_sha256": digest,
             "label": _label(cfg)}
    save_training_checkpoint(out, model, state, cfg, extra)
    _write(log_path, "\n".join(lines) + "\n")
    selection = "dev macro-F1" if cfg.disc_weight > 0 else "negative dev generative loss"
    print(f"trained {_label(cfg)} for {state.epoch} epochs; best {selection} {state.best_score:.4f} "
          f"at epoch {state.best_epoch} (config {cfg.hash()}, seed {cfg.seed}, split seed {cfg.split_seed})")
    return EXIT_OK


def _load_run(checkpoint, data_override=None, expected_arch=None):
    model, _, meta = load_checkpoint(checkpoint, expected_arch)
    cfg = RunConfig.from_dict(meta["config"])
    if meta.get("config_hash") != cfg.hash():
        raise ArchitectureMismatch(f"{checkpoint}: stored config hash does not match its config")
    if data_override:
        cfg = replace(cfg, data=data_override)
    seqs, digest = load_data(cfg.data)
    if digest != meta.get("dataset_sha256"):
        log.warning("dataset differs from the one used for training")
    parts = _splits(seqs, meta["split_seed"], NormStats.from_dict(meta["norm_stats"]))
    return model, cfg, meta, dict(zip(("train", "dev", "test"), parts))


def _metrics_text(title: str, report: MetricsReport) -> list[str]:
    lines = [title, f"{'metric':<12} value"]
    lines += [f"{METRIC_NAMES[k]:<12} {v:.4f}" for k, v in report.scores().items()]
    lines += ["", "per class", f"{'class':>5} {'f1':>7} {'auc':>7} {'support':>8}  note"]
    for r in report.per_class:
        auc = "   -   " if r.auc is None else f"{r.auc:7.4f}"
        lines.append(f"{r.label:>5} {r.f1:7.4f} {auc} {r.support:>8}  {r.note}".rstrip())
    return lines


def cmd_evaluate(args) -> int:
    model, cfg, meta, parts = _load_run(args.checkpoint, args.data)
    report = evaluate(model, parts[args.split])
    label = meta.get("label", _label(cfg))
    title = (f"{label} on the {args.split} split (split seed {meta['split_seed']}, seed {cfg.seed}, "
             f"config {cfg.hash()})")
    text = "\n".join(_metrics_text(title, report)) + "\n" + _footer([cfg.protocol_note()])
    payload = {"kind": "evaluation", "label": label, "arch": model.arch, "split": args.split,
               "split_seed": meta["split_seed"], "seed": cfg.seed, "config_hash": cfg.hash(),
               "protocol": cfg.protocol_note(), **report.to_dict()}
    _emit(args.out, text, payload)
    return EXIT_OK


def cmd_features(args) -> int:
    model, cfg, meta, parts = _load_run(args.checkpoint, args.data)
    if model.arch not in ("vae_nn", "vrnn_nn"):
        raise ArchitectureMismatch(f"feature transfer needs vae_nn or vrnn_nn, got {model.arch}")
    feats = {name: features(model, seqs) for name, seqs in parts.items()}
    wrapped = {name: wrap_features(feats[name], [s.label for s in parts[name]]) for name in parts}
    head_cfg = replace(cfg, model="nn", eta=0.0, disc_weight=1.0)
    head, _ = fit(head_cfg, wrapped["train"], wrapped["dev"], n_classes=model.n_classes)
    report = evaluate(head, wrapped["test"])
    label = "features:" + meta.get("label", _label(cfg))
    if args.out:
        prefix = Path(args.out)
        groups = {name: {"features": f, "labels": np.array([s.label for s in parts[name]])}
                  for name, f in feats.items()}
        save_arrays(prefix.with_name(prefix.name + ".features.npz"), groups,
                    {"label": label, "config_hash": cfg.hash(), "seed": cfg.seed,
                     "feature_dim": int(feats["train"].shape[1])})
    title = (f"fresh NN on frozen {label[9:]} features (dim {feats['train'].shape[1]}, split seed "
             f"{meta['split_seed']}, seed {cfg.seed}, config {cfg.hash()})")
    text = "\n".join(_metrics_text(title, report)) + "\n" + _footer([cfg.protocol_note()])
    payload = {"kind": "features", "label": label, "arch": model.arch, "split": "test",
               "feature_dim": int(feats["train"].shape[1]), "split_seed": meta["split_seed"],
               "seed": cfg.seed, "config_hash": cfg.hash(), "protocol": cfg.protocol_note(),
               **report.to_dict()}
    _emit(args.out, text, payload)
    return EXIT_OK


def run_impute(checkpoint, data=None, rate: float = 0.10, seeds=(1, 2, 3, 4, 5), extra_methods=None):
    """Drop-and-score imputation benchmark on the test split; returns ``(text, payload)``."""
    model, cfg, meta, parts = _load_run(checkpoint, data, expected_arch="vrnn_nn")
    methods = dict(HEURISTICS)
    methods["model"] = ModelImputer(model)
    methods.update(extra_methods or {})
    table = evaluate_imputation(parts["test"], methods, rate, seeds, reference="model")
    lines = [f"imputation MSE on hidden test entries (rate {rate}, seeds {list(seeds)}, split seed "
             f"{meta['split_seed']}, seed {cfg.seed}, config {cfg.hash()})",
             f"{'method':<10} {'MSE':<16} reference"]
    for m in table.methods:
        ref = REFERENCE_RESULTS["imputation_mse"].get(m, "")
        lines.append(f"{m:<10} {format_mean_std(table.mse[m]):<16} {ref}".rstrip())
    lines += ["", f"{'comparison':<20} {'t':>9} {'p':>10}  sig"]
    for c in table.comparisons:
        lines.append(f"{c['comparison']:<20} {c['t']:>9.3f} {c['p']:>10.3g}  {c['stars']}".rstrip())
    lines.append("sig: *** p < 0.001, ** p < 0.01, * p < 0.05 (paired t-test across seeds)")
    payload = {"kind": "imputation", "rate": rate, "split_seed": meta["split_seed"], "seed": cfg.seed,
               "config_hash": cfg.hash(), **table.to_dict()}
    return "\n".join(lines) + "\n" + _footer([cfg.protocol_note()]), payload


def cmd_impute(args) -> int:
    text, payload = run_impute(args.checkpoint, args.data, args.rate, args.seeds)
    _emit(args.out, text, payload)
    return EXIT_OK


# ---------------------------------------------------------------------------
# cross-seed report


def build_report(runs: list[dict], reference: str | None = None) -> tuple[str, dict]:
    """Mean ± std per label across split seeds plus paired t-tests against ``reference``."""
    by_label: dict = {}
    for r in runs:
        if r.get("kind") not in ("evaluation", "features"):
            raise DataError(f"cannot aggregate a {r.get('kind')!r} file")
        seeds = by_label.setdefault(r["label"], {})
        if r["split_seed"] in seeds:
            raise DataError(f"duplicate split seed {r['split_seed']} for {r['label']}")
        seeds[r["split_seed"]] = r
    labels = sorted(by_label)
    if reference is None:
        reference = "vrnn_nn" if "vrnn_nn" in by_label else labels[0]
    if reference not in by_label:
        raise ConfigError(f"reference {reference!r} not among {labels}")
    keys = list(METRIC_NAMES)
    header = f"{'model':<22} {'n':>2} " + " ".join(f"{METRIC_NAMES[k]:<15}" for k in keys)
    lines = ["diagnosis performance, mean ± std across split seeds", header]
    rows = []
    for label in labels:
        seeds = sorted(by_label[label])
        cells = {k: [by_label[label][s][k] for s in seeds] for k in keys}
        lines.append(f"{label:<22} {len(seeds):>2} " + " ".join(f"{format_mean_std(cells[k]):<15}" for k in keys))
        rows.append({"label": label, "split_seeds": seeds,
                     **{k: {"mean": float(np.mean(v)), "std": float(np.std(v, ddof=1)) if len(v) > 1 else 0.0,
                            "values": v} for k, v in cells.items()}})
    tests = []
    lines += ["", f"paired t-tests against {reference} (p, with *** p < 0.001, ** p < 0.01, * p < 0.05)",
              f"{'comparison':<34} " + " ".join(f"{METRIC_NAMES[k]:<15}" for k in keys)]
    ref = by_label[reference]
    for label in labels:
        if label == reference:
            continue
        shared = sorted(set(ref) & set(by_label[label]))
        if len(shared) < 2:
            continue
        entry = {"comparison": f"{reference} vs. {label}", "split_seeds": shared}
        cells = []
        for k in keys:
            res = paired_t_test([ref[s][k] for s in shared], [by_label[label][s][k] for s in shared])
            entry[k] = {"t": res.t, "p": res.p, "stars": res.stars, "degenerate": res.degenerate}
            cells.append(f"{res.p:.3g}{res.stars}")
        tests.append(entry)
        lines.append(f"{entry['comparison']:<34} " + " ".join(f"{c:<15}" for c in cells))
    hashes = sorted({r["config_hash"] for r in runs})
    digest = config_hash({"runs": hashes, "reference": reference})
    lines.append(f"config {digest} (from {len(hashes)} run configs)")
    payload = {"kind": "report", "reference": reference, "rows": rows, "tests": tests,
               "run_config_hashes": hashes, "config_hash": digest,
               "seeds": sorted({r["seed"] for r in runs}), "published": REFERENCE_RESULTS}
    return "\n".join(lines) + "\n" + _footer(r.get("protocol", "") for r in runs), payload


def cmd_report(args) -> int:
    runs = []
    for path in args.inputs:
        try:
            runs.append(json.loads(Path(path).read_text()))
        except FileNotFoundError:
            raise DataError(f"report input not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: not valid JSON ({exc})") from None
    text, payload = build_report(runs, args.reference)
    _emit(args.out, text, payload)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="labdx", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--synth-config", help="JSON or YAML file with generator settings")
    p.add_argument("--n-episodes", type=int)
    p.add_argument("--n-classes", type=int)
    p.add_argument("--n-tests", type=int)
    p.add_argument("--missing-rate", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="build a dataset from event and label CSV files")
    p.add_argument("--events", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--schema", required=True, help="JSON or YAML with n_tests and categorical token maps")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train one model on one split")
    _add_run_flags(p)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--resume", help="continue from a checkpoint written by train")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="six metrics and per-class table for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--split", choices=("train", "dev", "test"), default="test")
    p.add_argument("--out", help="output prefix for .txt and .json")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("impute", help="drop-and-score imputation benchmark with a vrnn_nn checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--rate", type=float, default=0.10)
    p.add_argument("--seeds", type=_int_list, default=[1, 2, 3, 4, 5])
    p.add_argument("--out")
    p.set_defaults(func=cmd_impute)

    p = sub.add_parser("features", help="fresh NN trained on frozen vae_nn/vrnn_nn features")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--out")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("report", help="aggregate evaluate/features outputs across split seeds")
    p.add_argument("inputs", nargs="+", help="JSON files written by evaluate or features")
    p.add_argument("--reference", help="label compared against every other row")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, ArchitectureMismatch) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
