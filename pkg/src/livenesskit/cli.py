"""Command-line entry point: preprocess, synth, split, combine, train, eval, crosseval, report, stats, verify.

Exit codes: 0 success, 1 usage error, 2 data error (missing or stale
artifacts, unreadable inputs), 3 protocol violation (leakage, thresholds
taken from test data).

Config files are JSON objects. Recognised keys: ``seed``, ``threads``,
``model``, ``protocol``, ``threshold_rule``, ``input_size``,
``bn_momentum``, ``quality_threshold`` and ``train`` (an object of
TrainConfig field overrides). Command-line flags win over the file.

Every command writes ``run_manifest.json`` into its ``--out`` directory
listing sha256 hashes of inputs and outputs, the seed, the thread count and
the package version; ``verify`` re-hashes them and, with ``--rerun``,
re-executes the command into a scratch directory and diffs the outputs.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import tempfile
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from . import datakit as dk
from . import imgproc, padmetrics as pm, protocol as pr, stats
from . import tensorcore as tc
from .errors import DataError, LivenessKitError, ProtocolViolation
from .models import CLI_NAMES, Network, ModelSpec
from .trainer import TABLE10, TrainConfig, config_dict, epoch_logs_csv, train_loop

log = logging.getLogger("livenesskit")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_PROTOCOL = 0, 1, 2, 3
RULES = {"eer": "eer_on_dev", "min-acer": "min_acer_on_dev"}
PROTOCOL_NAMES = {"within": "within", "cross": "cross_zero_shot", "combined": "combined"}
CONFIG_KEYS = {"seed", "threads", "model", "protocol", "threshold_rule", "input_size", "bn_momentum",
               "quality_threshold", "train"}
RUN_MANIFEST = "run_manifest.json"
DEFAULTS = {"seed": 42, "threads": 1, "model": "livenessnet", "protocol": "within", "threshold_rule": "eer",
            "input_size": 64, "bn_momentum": tc.BN_MOMENTUM, "quality_threshold": imgproc.QUALITY_THRESHOLD}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """Collects inputs/outputs of one command and writes the run manifest."""

    def __init__(self, args, settings: dict):
        self.args = args
        self.settings = settings
        self.out = Path(args.out)
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []

    def input(self, path: str | Path) -> Path:
        path = Path(path)
        if not path.exists():
            raise DataError(f"missing upstream artifact: {path}")
        files = [path] if path.is_file() else sorted(p for p in path.rglob("*") if p.is_file())
        for f in files:
            self.inputs[os.path.relpath(f, self.out)] = sha256_file(f)
        return path

    def path(self, name: str) -> Path:
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        if name not in self.outputs:
            self.outputs.append(name)
        return p

    def write_text(self, name: str, text: str) -> Path:
        p = self.path(name)
        p.write_text(text)
        return p

    def finish(self, argv: list[str]) -> None:
        outputs = {n: sha256_file(self.out / n) for n in sorted(self.outputs) if (self.out / n).is_file()}
        body = {
            "command": self.args.command,
            "argv": _portable_argv(argv, self.out),
            "seed": self.settings["seed"],
            "threads": self.settings["threads"],
            "version": __version__,
            "config_hash": dk.config_hash({k: v for k, v in self.settings.items()}),
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": outputs,
        }
        (self.out / RUN_MANIFEST).write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")


def _portable_argv(argv: list[str], out: Path) -> list[dict]:
    """argv with the output dir abstracted and existing paths made relative to it."""
    res = []
    prev = None
    for tok in argv:
        if prev == "--out":
            res.append({"out": True})
        elif not tok.startswith("-") and os.path.exists(tok):
            res.append({"path": os.path.relpath(tok, out)})
        else:
            res.append({"arg": tok})
        prev = tok
    return res


def _restore_argv(items: list[dict], base: Path, out: Path) -> list[str]:
    argv = []
    for it in items:
        if "out" in it:
            argv.append(str(out))
        elif "path" in it:
            argv.append(str((base / it["path"]).resolve()))
        else:
            argv.append(it["arg"])
    return argv


def load_settings(args) -> dict:
    cfg: dict = {}
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise DataError(f"config file not found: {args.config}")
        except json.JSONDecodeError as e:
            raise UsageError(f"{args.config}: invalid JSON ({e})")
        if not isinstance(cfg, dict):
            raise UsageError(f"{args.config}: top level must be an object")
        unknown = set(cfg) - CONFIG_KEYS
        if unknown:
            raise UsageError(f"{args.config}: unknown keys {sorted(unknown)}")
    settings = {**DEFAULTS, "train": {}}
    settings.update(cfg)
    for key in ("seed", "threads", "model", "protocol", "threshold_rule", "input_size", "bn_momentum",
                "quality_threshold"):
        val = getattr(args, key, None)
        if val is not None:
            settings[key] = val
    if settings["model"] not in CLI_NAMES:
        raise UsageError(f"unknown model {settings['model']!r}; choose from {sorted(CLI_NAMES)}")
    if settings["threshold_rule"] not in RULES:
        raise UsageError(f"unknown threshold rule {settings['threshold_rule']!r}")
    if settings["protocol"] not in PROTOCOL_NAMES:
        raise UsageError(f"unknown protocol {settings['protocol']!r}")
    if settings["input_size"] not in (64, 256):
        raise UsageError("input size must be 64 or 256")
    if int(settings["threads"]) < 1:
        raise UsageError("threads must be >= 1")
    known = {f.name for f in fields(TrainConfig)}
    bad = set(settings["train"]) - known
    if bad:
        raise UsageError(f"unknown train config keys {sorted(bad)}")
    return settings


def train_config(settings: dict, pooled: bool = False) -> TrainConfig:
    """Defaults, or the combined-training table for pooled data, then config-file overrides."""
    variant = CLI_NAMES[settings["model"]]
    base = TABLE10[variant] if pooled or settings["protocol"] == "combined" else TrainConfig()
    try:
        return base.with_overrides(**settings["train"], seed=settings["seed"])
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid train config: {e}")


def data_loader(run: Run, data_dirs: list[str], size: int):
    roots = {}
    for d in data_dirs or []:
        p = Path(d)
        if not p.is_dir():
            raise DataError(f"data directory not found: {d}")
        roots[p.name] = p

    def load(r: dk.SampleRecord) -> np.ndarray:
        if r.dataset not in roots:
            raise DataError(f"no --data directory named {r.dataset!r} for sample {r.sample_id}")
        return imgproc.resize(imgproc.read_image(roots[r.dataset] / r.path), size)

    return load


def load_manifest(run: Run, path: str) -> dk.SplitManifest:
    return dk.SplitManifest.load(run.input(path))


def score_name(model: str, trainset: str, evalset: str, split: str) -> str:
    return f"scores/{model}__{trainset}__{evalset}__{split}.csv"


def _write_scores(run: Run, name: str, records: list[dk.SampleRecord], probs_bona: np.ndarray) -> None:
    pm.write_scores(run.path(name), [r.sample_id for r in records], [r.label for r in records], probs_bona)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_preprocess(args, settings, run: Run) -> int:
    root = Path(args.root)
    if not root.is_dir():
        raise DataError(f"input directory not found: {root}")
    thr = float(settings["quality_threshold"])
    dataset = args.dataset or root.name
    records = dk.scan_dataset_tree(root, dataset)
    rows, errors, kept = [], [], []
    for r in records:
        try:
            img = imgproc.read_image(root / r.path)
        except (DataError, OSError, ValueError) as e:
            errors.append([r.path, str(e)])
            continue
        run.inputs[os.path.relpath(root / r.path, run.out)] = sha256_file(root / r.path)
        q = imgproc.composite_quality(img)
        rows.append(imgproc.quality_row(r.path, q, thr))
        if imgproc.passes_filter(q, thr):
            kept.append(dk.SampleRecord(r.sample_id, r.label, r.subject, r.video, r.dataset,
                                        round(q.composite, 6), "unassigned", r.path))
            if args.enhance:
                imgproc.write_image(run.path(f"enhanced/{dataset}/{r.path}"), imgproc.enhance(img))
    buf = [",".join(imgproc.QUALITY_COLUMNS)] + [",".join(row) for row in rows]
    run.write_text("quality.csv", "\n".join(buf) + "\n")
    dk.source_manifest(kept, settings["seed"]).save(run.path("manifest.txt"))
    if errors:
        with open(run.path("errors.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["path", "error"])
            w.writerows(errors)
        log.error("%d unreadable files, see errors.csv", len(errors))
        return EXIT_DATA
    if not records:
        log.error("no images found under %s", root)
        return EXIT_DATA
    log.info("%d/%d images pass quality threshold %.2f", len(kept), len(rows), thr)
    return EXIT_OK


def cmd_synth(args, settings, run: Run) -> int:
    params = {"A": dk.DOMAIN_A, "B": dk.DOMAIN_B}[args.domain]
    synth = dk.synth_generate(args.subjects, args.frames, params, settings["seed"], args.videos)
    dk.write_dataset_tree(run.out / params.name, synth)
    for r in synth.records:
        run.outputs.append(f"{params.name}/{r.path}")
    dk.source_manifest(synth.records, settings["seed"]).save(run.path(f"{params.name}.manifest"))
    return EXIT_OK


def cmd_split(args, settings, run: Run) -> int:
    src = load_manifest(run, args.manifest)
    man = dk.group_split(src.records, args.train_frac, settings["seed"], args.val_frac, not args.no_balance)
    man.validate(check_ratio=not args.no_balance)
    man.save(run.path("split_manifest.txt"))
    for s in ("train", "val", "test"):
        log.info("%s: %s", s, man.class_counts(s))
    return EXIT_OK


def cmd_combine(args, settings, run: Run) -> int:
    mans = [load_manifest(run, m) for m in args.manifest]
    man = dk.combine_datasets(mans, args.train_frac, settings["seed"], args.val_frac)
    pr.check_no_leakage(man)
    man.save(run.path("combined_manifest.txt"))
    return EXIT_OK


def _trainset_name(man: dk.SplitManifest) -> str:
    names = man.datasets()
    return names[0] if len(names) == 1 else pr.COMBINED


def cmd_train(args, settings, run: Run) -> int:
    man = load_manifest(run, args.manifest)
    man.validate(check_ratio=False)
    pooled = len(man.datasets()) > 1
    cfg = train_config(settings, pooled)
    variant = CLI_NAMES[settings["model"]]
    size = int(settings["input_size"])
    plan = pr.ExperimentPlan((variant,), tuple(man.datasets()), protocol="combined" if pooled else "within",
                             configs={variant: cfg}, threshold_rule=RULES[settings["threshold_rule"]],
                             seed=settings["seed"], input_size=size, bn_momentum=settings["bn_momentum"])
    load = data_loader(run, args.data, size)
    missing = sorted(set(man.datasets()) - {Path(d).name for d in args.data or []})
    if missing:
        raise DataError(f"no --data directory for datasets {missing}")
    if args.dry_run:
        print(json.dumps({"model": variant, "train": config_dict(cfg), "plan": plan.fingerprint(),
                          "counts": {s: man.class_counts(s) for s in ("train", "val", "test")}},
                         indent=2, sort_keys=True))
        run.outputs.clear()
        return EXIT_OK
    bundle = pr.DatasetBundle(man, load, _trainset_name(man))
    net = pr.network_for(plan, variant)
    result = train_loop(net, bundle.arrays("train", size), bundle.arrays("val", size), cfg, pr.augmenter(cfg))
    xv, yv = bundle.arrays("val", size)
    probs = net.predict(pr.to_input(xv, net.dtype))[:, 0].astype(np.float64)
    dev = pm.ScoreSet.from_labels(probs, yv.astype(bool), bundle.name, "val")
    policy = pr.resolve_policy(dev, plan.threshold_rule, (bundle.name,))
    tc.save_weights(run.path("weights.npz"), net.weights())
    net.spec.save(run.path("model_spec.json"))
    run.write_text("epoch_log.csv", epoch_logs_csv(result.logs))
    run.write_text("policy.json", json.dumps({"rule": policy.rule, "tau": policy.tau,
                                              "source_dataset": policy.source_dataset,
                                              "source_split": policy.source_split,
                                              "model": settings["model"], "bn_momentum": settings["bn_momentum"],
                                              "input_size": size}, indent=2, sort_keys=True) + "\n")
    _write_scores(run, score_name(settings["model"], bundle.name, bundle.name, "val"), bundle.records("val"), probs)
    return EXIT_OK


def _load_model(run: Run, model_dir: str):
    d = Path(model_dir)
    manifest_path = d / RUN_MANIFEST
    for name in ("weights.npz", "model_spec.json", "policy.json", RUN_MANIFEST):
        if not (d / name).is_file():
            raise DataError(f"missing upstream artifact {d / name}; run `livenesskit train` first")
    recorded = json.loads(manifest_path.read_text())["outputs"]
    for name in ("weights.npz", "model_spec.json", "policy.json"):
        if recorded.get(name) != sha256_file(d / name):
            raise DataError(f"stale artifact {d / name}: hash differs from {manifest_path}; re-run train")
        run.input(d / name)
    meta = json.loads((d / "policy.json").read_text())
    spec = ModelSpec.from_json((d / "model_spec.json").read_text())
    net = Network(spec, bn_momentum=meta["bn_momentum"])
    net.set_weights(tc.load_weights(d / "weights.npz"))
    policy = pm.ThresholdPolicy(meta["rule"], meta["tau"], meta["source_dataset"], meta["source_split"])
    if policy.source_split != "val":
        raise ProtocolViolation(f"{d / 'policy.json'}: threshold was not resolved on a validation split")
    return net, policy, meta


def _eval_targets(args, settings, run: Run, manifests: list[str]) -> list[pm.MetricReport]:
    net, policy, meta = _load_model(run, args.model_dir)
    size = int(meta["input_size"])
    load = data_loader(run, args.data, size)
    reports = []
    for mpath in manifests:
        man = load_manifest(run, mpath)
        man.validate(check_ratio=False)
        name = _trainset_name(man)
        groups = [(name, man.split_records("test"))]
        if name == pr.COMBINED:
            groups += [(ds, [r for r in man.split_records("test") if r.dataset == ds]) for ds in man.datasets()]
        for ds, recs in groups:
            bundle = pr.DatasetBundle(dk.SplitManifest(man.seed, recs), load, ds)
            x, y = bundle.arrays("test", size)
            probs = net.predict(pr.to_input(x, net.dtype))[:, 0].astype(np.float64)
            s = pm.ScoreSet.from_labels(probs, y.astype(bool), ds, "test")
            reports.append(pm.evaluate(s, policy, model=CLI_NAMES[meta["model"]], dataset=ds))
            _write_scores(run, score_name(meta["model"], policy.source_dataset, ds, "test"), recs, probs)
    run.write_text("report.csv", pm.reports_to_csv(reports))
    return reports


def cmd_eval(args, settings, run: Run) -> int:
    _eval_targets(args, settings, run, [args.manifest])
    return EXIT_OK


def cmd_crosseval(args, settings, run: Run) -> int:
    reports = _eval_targets(args, settings, run, args.manifest)
    if any(pr.source_of(r) != r.dataset for r in reports):
        run.write_text("cross.csv", pr.cross_table(reports))
    return EXIT_OK


def collate_scores(scores_dir: Path, rule: str) -> list[pm.MetricReport]:
    """Reports from a directory of ``<model>__<trainset>__<evalset>__<split>.csv`` score files."""
    files = sorted(scores_dir.glob("*.csv"))
    if not files:
        raise DataError(f"no score files in {scores_dir}")
    parsed = {}
    for f in files:
        parts = f.stem.split("__")
        if len(parts) != 4 or parts[3] not in ("val", "test"):
            raise DataError(f"{f.name}: expected <model>__<trainset>__<evalset>__<split>.csv")
        parsed[tuple(parts)] = f
    reports = []
    for model, trainset in sorted({(k[0], k[1]) for k in parsed}):
        dev_key = (model, trainset, trainset, "val")
        if dev_key not in parsed:
            raise DataError(f"missing development scores {'__'.join(dev_key)}.csv")
        dev = pm.read_scores(parsed[dev_key], trainset, "val")
        policy = pr.resolve_policy(dev, rule, (trainset,))
        tests = sorted(k for k in parsed if k[:2] == (model, trainset) and k[3] == "test")
        # own dataset (or pooled test) first, then the other targets alphabetically
        tests.sort(key=lambda k: (k[2] != trainset, k[2]))
        for k in tests:
            s = pm.read_scores(parsed[k], k[2], "test")
            reports.append(pm.evaluate(s, policy, model=CLI_NAMES.get(model, model), dataset=k[2]))
    return reports


def write_tables(run: Run, reports: list[pm.MetricReport]) -> None:
    run.write_text("reports.csv", pm.reports_to_csv(reports))
    single = [r for r in reports if pr.source_of(r) != pr.COMBINED]
    combined = [r for r in reports if pr.source_of(r) == pr.COMBINED]
    within = [r for r in single if pr.source_of(r) == r.dataset]
    cross = [r for r in single if pr.source_of(r) != r.dataset]
    if within:
        run.write_text("within.csv", pr.within_table(within))
    if cross:
        run.write_text("cross.csv", pr.cross_table(cross))
    if combined:
        run.write_text("combined.csv", pr.combined_table(combined))
        run.write_text("biometric.csv", pr.biometric_table(combined))
        run.write_text("confusion.csv", pr.confusion_table(combined))
        if any(r.dataset != pr.COMBINED for r in combined):
            run.write_text("per_source_accuracy.csv", pr.per_source_table(combined, "accuracy"))
            run.write_text("per_source_acer.csv", pr.per_source_table(combined, "acer"))
            if cross:
                run.write_text("improvement.csv", pr.improvement_table(cross, combined))


def cmd_report(args, settings, run: Run) -> int:
    scores_dir = run.input(args.scores_dir)
    write_tables(run, collate_scores(scores_dir, RULES[settings["threshold_rule"]]))
    return EXIT_OK


def cmd_stats(args, settings, run: Run) -> int:
    path = run.input(args.input)
    groups: dict[str, list[float]] = {}
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "group" not in rows[0] or "value" not in rows[0]:
        raise DataError(f"{path}: expected columns group,value")
    for row in rows:
        groups.setdefault(row["group"], []).append(float(row["value"]))
    try:
        rep = stats.pairwise_ttests(groups, adjustment=args.adjustment)
    except ValueError as e:
        raise DataError(str(e))
    run.write_text("stats.csv", pr.stats_table(rep))
    return EXIT_OK


def cmd_verify(args, settings, run: Run) -> int:
    out = Path(args.out)
    mpath = out / RUN_MANIFEST
    if not mpath.is_file():
        raise DataError(f"no {RUN_MANIFEST} in {out}")
    body = json.loads(mpath.read_text())
    bad = []
    for name, digest in body["outputs"].items():
        p = out / name
        if not p.is_file() or sha256_file(p) != digest:
            bad.append(name)
    for name, digest in body["inputs"].items():
        p = out / name
        if not p.is_file() or sha256_file(p) != digest:
            bad.append(f"input {name}")
    if not bad and args.rerun:
        with tempfile.TemporaryDirectory() as tmp:
            argv = _restore_argv(body["argv"], out, Path(tmp))
            code = main(argv)
            if code != EXIT_OK:
                bad.append(f"rerun exited with {code}")
            else:
                again = json.loads((Path(tmp) / RUN_MANIFEST).read_text())["outputs"]
                bad += [f"rerun differs: {n}" for n in sorted(set(again) | set(body["outputs"]))
                        if again.get(n) != body["outputs"].get(n)]
    for b in bad:
        print(f"MISMATCH {b}")
    if bad:
        return EXIT_DATA
    print(f"OK {len(body['outputs'])} outputs verified")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--model", choices=sorted(CLI_NAMES))
    common.add_argument("--protocol", choices=sorted(PROTOCOL_NAMES))
    common.add_argument("--threshold-rule", dest="threshold_rule", choices=sorted(RULES))
    common.add_argument("--input-size", dest="input_size", type=int, choices=(64, 256))
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="livenesskit", description="Face presentation-attack detection toolkit")
    p.add_argument("--version", action="version", version=f"livenesskit {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("preprocess", parents=[common], help="quality-score and filter an image tree")
    s.add_argument("root")
    s.add_argument("--dataset")
    s.add_argument("--quality-threshold", dest="quality_threshold", type=float)
    s.add_argument("--enhance", action="store_true", help="also write enhanced images")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("synth", parents=[common], help="render a synthetic dataset tree")
    s.add_argument("--domain", choices=("A", "B"), default="A")
    s.add_argument("--subjects", type=int, default=25)
    s.add_argument("--frames", type=int, default=20)
    s.add_argument("--videos", type=int, default=1)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("split", parents=[common], help="grouped, class-balanced train/val/test split")
    s.add_argument("--manifest", required=True)
    s.add_argument("--train-frac", dest="train_frac", type=float, default=0.8)
    s.add_argument("--val-frac", dest="val_frac", type=float, default=0.15)
    s.add_argument("--no-balance", dest="no_balance", action="store_true")
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("combine", parents=[common], help="pool several source manifests and re-split")
    s.add_argument("--manifest", action="append", required=True)
    s.add_argument("--train-frac", dest="train_frac", type=float, default=0.8)
    s.add_argument("--val-frac", dest="val_frac", type=float, default=0.15)
    s.set_defaults(func=cmd_combine)

    s = sub.add_parser("train", parents=[common], help="train a model and fix its threshold on val")
    s.add_argument("--manifest", required=True)
    s.add_argument("--data", action="append", help="dataset root; its directory name is the dataset name")
    s.add_argument("--dry-run", dest="dry_run", action="store_true")
    s.set_defaults(func=cmd_train)

    for name, fn, many in (("eval", cmd_eval, False), ("crosseval", cmd_crosseval, True)):
        s = sub.add_parser(name, parents=[common], help=f"{name} a trained model on test splits")
        s.add_argument("--model-dir", dest="model_dir", required=True)
        s.add_argument("--manifest", required=True, action="append" if many else "store")
        s.add_argument("--data", action="append")
        s.set_defaults(func=fn)

    s = sub.add_parser("report", parents=[common], help="collate score files into report tables")
    s.add_argument("--scores-dir", dest="scores_dir", required=True)
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("stats", parents=[common], help="ANOVA and pairwise Welch t-tests")
    s.add_argument("--input", required=True, help="CSV with columns group,value")
    s.add_argument("--adjustment", choices=("bonferroni", "none"), default="bonferroni")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("verify", parents=[common], help="re-hash (and optionally re-run) a command's artifacts")
    s.add_argument("--rerun", action="store_true")
    s.set_defaults(func=cmd_verify)
    return p


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        settings = load_settings(args)
    except UsageError as e:
        print(f"livenesskit: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except LivenessKitError as e:
        print(f"livenesskit: error: {e}", file=sys.stderr)
        return e.exit_code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    from threadpoolctl import threadpool_limits

    run = Run(args, settings)
    try:
        if args.command != "verify":
            run.out.mkdir(parents=True, exist_ok=True)
        with threadpool_limits(limits=int(settings["threads"])):
            code = args.func(args, settings, run)
        if args.command not in ("verify",) and not getattr(args, "dry_run", False):
            run.finish(argv)
        return code
    except UsageError as e:
        print(f"livenesskit: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ProtocolViolation as e:
        print(f"livenesskit: protocol violation: {e}", file=sys.stderr)
        return EXIT_PROTOCOL
    except LivenessKitError as e:
        print(f"livenesskit: error: {e}", file=sys.stderr)
        return e.exit_code
    except (FileNotFoundError, OSError) as e:
        print(f"livenesskit: error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
