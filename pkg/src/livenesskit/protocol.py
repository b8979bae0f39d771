"""Experiment protocols: within-dataset, zero-shot cross-dataset and combined training.

Data reaches a protocol through ``DatasetBundle`` objects (a split manifest
plus an image loader). Bona fide probability is the PAD score, so a sample
is accepted as bona fide when ``P(bonafide) >= tau``.

Zero-shot hygiene is enforced by the call structure: a model is fitted and
its threshold resolved from source validation scores before any target
bundle is touched, and ``resolve_policy`` refuses anything other than a
source validation ScoreSet.
"""

from __future__ import annotations

import csv
import io
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import imgproc
from .datakit import SampleRecord, SplitManifest, combine_datasets, config_hash
from .errors import DataError, ProtocolViolation
from .models import CLI_NAMES, Network, build
from .padmetrics import MetricReport, ScoreSet, ThresholdPolicy, evaluate, select_threshold
from .stats import StatReport, anova_oneway, pairwise_ttests, pca_separability
from .trainer import TABLE10, TrainConfig, TrainResult, config_dict, to_input, train_loop

log = logging.getLogger(__name__)

PROTOCOLS = ("within", "cross_zero_shot", "combined")
THRESHOLD_RULES = ("eer_on_dev", "min_acer_on_dev")
COMBINED = "combined"

# statistics live in .stats and are re-exported here with the protocols they serve
STATS = (anova_oneway, pairwise_ttests, pca_separability)


# --------------------------------------------------------------------------
# data and plans
# --------------------------------------------------------------------------

@dataclass
class DatasetBundle:
    """A split manifest plus a loader mapping a record to a uint8 HxWx3 image."""

    manifest: SplitManifest
    loader: Callable[[SampleRecord], np.ndarray]
    name: str = ""

    def __post_init__(self):
        if not self.name:
            names = self.manifest.datasets()
            self.name = names[0] if len(names) == 1 else COMBINED

    def records(self, split: str) -> list[SampleRecord]:
        return self.manifest.split_records(split)

    def arrays(self, split: str, size: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        recs = self.records(split)
        if not recs:
            raise DataError(f"{self.name}: split {split!r} is empty")
        imgs = [self.loader(r) for r in recs]
        if size is not None:
            imgs = [im if im.shape[:2] == (size, size) else imgproc.resize(im, size) for im in imgs]
        x = np.stack(imgs)
        y = np.array([int(r.is_attack) for r in recs], dtype=np.int64)
        return x, y


def synthetic_bundle(synth, manifest: SplitManifest) -> DatasetBundle:
    return DatasetBundle(manifest, lambda r: synth.images[r.sample_id], synth.params.name)


@dataclass(frozen=True)
class ExperimentPlan:
    models: tuple[str, ...]
    sources: tuple[str, ...]
    targets: tuple[str, ...] = ()
    protocol: str = "within"
    configs: Mapping[str, TrainConfig] = field(default_factory=dict)
    threshold_rule: str = "eer_on_dev"
    seed: int = 42
    input_size: int = 64
    bn_momentum: float = 0.99

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"protocol must be one of {PROTOCOLS}, got {self.protocol!r}")
        if self.threshold_rule not in THRESHOLD_RULES:
            raise ValueError(f"threshold rule must be one of {THRESHOLD_RULES}")
        if not self.models or not self.sources:
            raise ValueError("a plan needs at least one model and one source")
        for mdl in self.models:
            if mdl not in CLI_NAMES.values():
                raise ValueError(f"unknown model variant {mdl!r}")
        if self.protocol == "within" and len(self.sources) != 1:
            raise ValueError("within-dataset protocol takes exactly one source")
        if self.protocol == "combined" and len(self.sources) < 2:
            raise ValueError("combined protocol needs at least two sources")

    def config_for(self, model: str) -> TrainConfig:
        """Explicit per-model config, else the combined-training table for combined runs."""
        if model in self.configs:
            cfg = self.configs[model]
        elif self.protocol == "combined":
            cfg = TABLE10[model]
        else:
            cfg = TrainConfig()
        return cfg.with_overrides(seed=self.seed)

    def fingerprint(self) -> str:
        return config_hash({
            "models": list(self.models), "sources": list(self.sources), "targets": list(self.targets),
            "protocol": self.protocol, "threshold_rule": self.threshold_rule, "seed": self.seed,
            "input_size": self.input_size, "bn_momentum": self.bn_momentum,
            "configs": {m: config_dict(self.config_for(m)) for m in self.models},
        })


# --------------------------------------------------------------------------
# fitting and scoring
# --------------------------------------------------------------------------

@dataclass
class FittedModel:
    model: str
    sources: tuple[str, ...]
    net: Network
    policy: ThresholdPolicy
    train: TrainResult


@dataclass
class ProtocolResult:
    reports: list[MetricReport]
    fits: dict[tuple[str, str], FittedModel] = field(default_factory=dict)
    scores: dict[tuple[str, str], ScoreSet] = field(default_factory=dict)


def score(net: Network, x: np.ndarray, y: np.ndarray, dataset: str, split: str) -> ScoreSet:
    probs = net.predict(to_input(x, net.dtype))
    return ScoreSet.from_labels(probs[:, 0].astype(np.float64), y.astype(bool), dataset, split)


def resolve_policy(dev: ScoreSet, rule: str, sources: Sequence[str]) -> ThresholdPolicy:
    """Threshold from source validation scores only."""
    if dev.split != "val" or dev.dataset not in sources:
        raise ProtocolViolation(
            f"threshold resolution accepts source validation scores only, got {dev.dataset}/{dev.split}")
    return select_threshold(dev, rule)


def augment_batch(batch: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Training-split augmentation of a uint8 batch, one independent draw per image."""
    return np.stack([imgproc.augment(im, rng, split="train").image for im in batch])


def augmenter(cfg: TrainConfig):
    return augment_batch if cfg.augment else None


def network_for(plan: ExperimentPlan, model: str) -> Network:
    """Fresh network; the config's dropout sets the conv-block rate, the dense rate stays architectural."""
    cfg = plan.config_for(model)
    spec = build(model, (plan.input_size, plan.input_size, 3), dropout_conv=cfg.dropout, l2=cfg.l2)
    return Network(spec, seed=plan.seed, bn_momentum=plan.bn_momentum)


def fit(plan: ExperimentPlan, model: str, bundle: DatasetBundle) -> FittedModel:
    """Train one model on a bundle's train split and fix tau on its val split."""
    bundle.manifest.validate(check_ratio=False)
    net = network_for(plan, model)
    size = plan.input_size
    cfg = plan.config_for(model)
    result = train_loop(net, bundle.arrays("train", size), bundle.arrays("val", size), cfg, augmenter(cfg))
    xv, yv = bundle.arrays("val", size)
    policy = resolve_policy(score(net, xv, yv, bundle.name, "val"), plan.threshold_rule, (bundle.name,))
    log.info("%s on %s: tau=%.6f (%s)", model, bundle.name, policy.tau, policy.fingerprint())
    return FittedModel(model, (bundle.name,), net, policy, result)


def _evaluate_on(fitted: FittedModel, bundle: DatasetBundle, plan: ExperimentPlan,
                 records: Sequence[SampleRecord] | None = None, dataset: str | None = None
                 ) -> tuple[MetricReport, ScoreSet]:
    if records is None:
        x, y = bundle.arrays("test", plan.input_size)
    else:
        sub = DatasetBundle(SplitManifest(bundle.manifest.seed, list(records)), bundle.loader, dataset or bundle.name)
        x, y = sub.arrays("test", plan.input_size)
    ds = dataset or bundle.name
    s = score(fitted.net, x, y, ds, "test")
    return evaluate(s, fitted.policy, model=fitted.model, dataset=ds), s


# --------------------------------------------------------------------------
# protocols
# --------------------------------------------------------------------------

def run_within(plan: ExperimentPlan, bundles: Mapping[str, DatasetBundle]) -> ProtocolResult:
    """Train on train, pick tau on val, report on test of the same dataset."""
    (src,) = plan.sources
    bundle = bundles[src]
    bundle.manifest.validate()
    out = ProtocolResult([])
    for model in plan.models:
        fitted = fit(plan, model, bundle)
        rep, s = _evaluate_on(fitted, bundle, plan)
        out.reports.append(rep)
        out.fits[(model, src)] = fitted
        out.scores[(model, src)] = s
    return out


def run_cross_zero_shot(plan: ExperimentPlan, bundles: Mapping[str, DatasetBundle],
                        fits: Mapping[tuple[str, str], FittedModel] | None = None) -> ProtocolResult:
    """Apply each source-trained model and its source threshold unchanged to every target test split.

    ``fits`` may carry models already trained by ``run_within`` with the
    same plan seed; otherwise they are trained here. Target bundles are
    only read after the source policy is frozen.
    """
    targets = plan.targets or tuple(bundles)
    out = ProtocolResult([])
    for src in plan.sources:
        bundles[src].manifest.validate()
        for model in plan.models:
            fitted = (fits or {}).get((model, src)) or fit(plan, model, bundles[src])
            if fitted.policy.source_dataset != src or fitted.policy.source_split != "val":
                raise ProtocolViolation(f"policy for {model}/{src} was not resolved on {src}/val")
            policy_id = fitted.policy.fingerprint()
            out.fits[(model, src)] = fitted
            for tgt in targets:
                rep, s = _evaluate_on(fitted, bundles[tgt], plan)
                assert fitted.policy.fingerprint() == policy_id
                out.reports.append(rep)
                out.scores[(model, f"{src}->{tgt}")] = s
    return out


def check_no_leakage(manifest: SplitManifest) -> None:
    """Hard failure when any sample, video or subject of the train side reappears in test."""
    manifest.validate(check_ratio=False)
    train = manifest.split_records("train") + manifest.split_records("val")
    test = manifest.split_records("test")
    train_ids = {r.sample_id for r in train}
    train_videos = {(r.dataset, r.video) for r in train if r.video}
    for r in test:
        if r.sample_id in train_ids or (r.video and (r.dataset, r.video) in train_videos):
            raise ProtocolViolation(f"leakage: {r.sample_id} appears on both sides of the pooled split")


def run_combined(plan: ExperimentPlan, bundles: Mapping[str, DatasetBundle]) -> ProtocolResult:
    """Pool the sources, train once per model, report on pooled test and on each source's share of it."""
    manifests = [bundles[s].manifest for s in plan.sources]
    pooled = combine_datasets(manifests, seed=plan.seed)
    check_no_leakage(pooled)
    loaders = {s: bundles[s].loader for s in plan.sources}
    bundle = DatasetBundle(pooled, lambda r: loaders[r.dataset](r), COMBINED)
    test = pooled.split_records("test")
    out = ProtocolResult([])
    for model in plan.models:
        net = network_for(plan, model)
        size = plan.input_size
        cfg = plan.config_for(model)
        result = train_loop(net, bundle.arrays("train", size), bundle.arrays("val", size), cfg, augmenter(cfg))
        xv, yv = bundle.arrays("val", size)
        policy = resolve_policy(score(net, xv, yv, COMBINED, "val"), plan.threshold_rule, (COMBINED,))
        fitted = FittedModel(model, tuple(plan.sources), net, policy, result)
        out.fits[(model, COMBINED)] = fitted
        rep, s = _evaluate_on(fitted, bundle, plan)
        out.reports.append(rep)
        out.scores[(model, COMBINED)] = s
        for src in plan.sources:
            recs = [r for r in test if r.dataset == src]
            if not recs:
                raise DataError(f"source {src!r} has no samples in the pooled test split")
            rep, s = _evaluate_on(fitted, bundle, plan, recs, src)
            out.reports.append(rep)
            out.scores[(model, src)] = s
    return out


RUNNERS = {"within": run_within, "cross_zero_shot": run_cross_zero_shot, "combined": run_combined}


def run(plan: ExperimentPlan, bundles: Mapping[str, DatasetBundle]) -> ProtocolResult:
    return RUNNERS[plan.protocol](plan, bundles)


# --------------------------------------------------------------------------
# table-shaped CSV emitters
# --------------------------------------------------------------------------

def _csv(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in row])
    return buf.getvalue()


WITHIN_COLUMNS = ("model", "dataset", "accuracy", "precision", "recall", "f1", "roc_auc", "apcer", "bpcer", "acer", "eer")
COMBINED_COLUMNS = ("model", "accuracy", "precision", "recall", "f1", "roc_auc", "pr_auc")
BIOMETRIC_COLUMNS = ("model", "apcer", "bpcer", "acer", "eer", "hter", "mcc", "kappa")
CONFUSION_COLUMNS = ("model", "tp", "tn", "fp", "fn")


def _select(reports: Sequence[MetricReport], cols: Sequence[str]) -> str:
    return _csv(cols, [[getattr(r, c) for c in cols] for r in reports])


def within_table(reports: Sequence[MetricReport]) -> str:
    return _select(reports, WITHIN_COLUMNS)


def combined_table(reports: Sequence[MetricReport]) -> str:
    return _select([r for r in reports if r.dataset == COMBINED], COMBINED_COLUMNS)


def biometric_table(reports: Sequence[MetricReport]) -> str:
    return _select([r for r in reports if r.dataset == COMBINED], BIOMETRIC_COLUMNS)


def confusion_table(reports: Sequence[MetricReport]) -> str:
    return _select([r for r in reports if r.dataset == COMBINED], CONFUSION_COLUMNS)


def source_of(rep: MetricReport) -> str:
    return rep.threshold_source.split("/")[0]


def cross_table(reports: Sequence[MetricReport]) -> str:
    """Averages over transfers (source != target) per (training dataset, model)."""
    cells: dict[tuple[str, str], list[MetricReport]] = defaultdict(list)
    for r in reports:
        if source_of(r) != r.dataset:
            cells[(source_of(r), r.model)].append(r)
    rows = []
    for (src, model), reps in sorted(cells.items()):
        best = max(reps, key=lambda r: (r.accuracy, r.dataset))
        worst = min(reps, key=lambda r: (r.accuracy, r.dataset))
        rows.append([src, model, float(np.mean([r.accuracy for r in reps])), float(np.mean([r.acer for r in reps])),
                     float(np.mean([r.eer for r in reps])), f"{best.dataset} ({best.accuracy:.3f})",
                     f"{worst.dataset} ({worst.accuracy:.3f})"])
    return _csv(("training_dataset", "model", "avg_accuracy", "avg_acer", "avg_eer", "best_transfer",
                 "worst_transfer"), rows)


def per_source_table(reports: Sequence[MetricReport], metric: str) -> str:
    """Models by source datasets plus an Average column, for combined-trained models."""
    per = [r for r in reports if r.dataset != COMBINED and source_of(r) == COMBINED]
    datasets = sorted({r.dataset for r in per})
    models = list(dict.fromkeys(r.model for r in per))
    rows = []
    for m in models:
        vals = {r.dataset: getattr(r, metric) for r in per if r.model == m}
        row = [vals.get(d, float("nan")) for d in datasets]
        rows.append([m, *row, float(np.mean(row))])
    return _csv(("model", *datasets, "average"), rows)


def improvement_table(cross_reports: Sequence[MetricReport], combined_reports: Sequence[MetricReport]) -> str:
    """Single-dataset cross-evaluation baseline against each combined-trained model.

    ``improvement`` is (combined - baseline) average accuracy;
    ``improvement_rel`` divides it by the baseline.
    """
    transfers = [r for r in cross_reports if source_of(r) != r.dataset]
    if not transfers:
        raise DataError("no cross-dataset transfers to form a baseline")
    base = [float(np.mean([getattr(r, k) for r in transfers])) for k in ("accuracy", "acer", "eer")]
    rows = [["single-dataset (cross-evaluation)", *base, 0.0, 0.0]]
    per = [r for r in combined_reports if r.dataset != COMBINED and source_of(r) == COMBINED]
    for m in dict.fromkeys(r.model for r in per):
        reps = [r for r in per if r.model == m]
        vals = [float(np.mean([getattr(r, k) for r in reps])) for k in ("accuracy", "acer", "eer")]
        diff = vals[0] - base[0]
        rows.append([f"combined ({m})", *vals, diff, diff / base[0] if base[0] else float("nan")])
    return _csv(("training_approach", "avg_accuracy", "avg_acer", "avg_eer", "improvement", "improvement_rel"), rows)


def stats_table(report: StatReport) -> str:
    a = report.anova
    rows = [["anova", "", "", a.f, a.df_between, a.df_within, a.p, a.p, "", "none", a.flag]]
    for p in report.pairs:
        rows.append([report.test, p.a, p.b, p.t, p.df, "", p.p, p.p_adjusted, p.mean_difference, report.adjustment,
                     p.flag])
    return _csv(("test", "group_a", "group_b", "statistic", "df1", "df2", "p", "p_adjusted", "mean_difference",
                 "adjustment", "flag"), rows)

