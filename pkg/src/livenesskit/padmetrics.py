"""Classification and ISO/IEC 30107-3 presentation-attack-detection metrics.

Conventions used throughout:

* a score ``s`` is a bona fide score, higher means more bona fide;
* a sample is classified bona fide when ``s >= tau`` and attack otherwise;
* the positive class of the confusion matrix is *attack*, so a false
  negative is an attack accepted as bona fide (APCER numerator) and a
  false positive is a bona fide sample rejected as attack (BPCER numerator).

Undefined quantities (an empty denominator, a one-class score set) are
returned as NaN and named in the report's ``flags``; they never silently
become 0.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np

from .errors import DataError, ProtocolViolation

NAN = float("nan")

RULES = ("eer_on_dev", "min_acer_on_dev", "fixed")


@dataclass(frozen=True)
class ScoreSet:
    bonafide: np.ndarray
    attack: np.ndarray
    dataset: str | None = None
    split: str | None = None

    def __post_init__(self):
        bona = np.asarray(self.bonafide, dtype=np.float64).reshape(-1)
        atk = np.asarray(self.attack, dtype=np.float64).reshape(-1)
        if not (np.all(np.isfinite(bona)) and np.all(np.isfinite(atk))):
            raise DataError("scores must be finite")
        object.__setattr__(self, "bonafide", bona)
        object.__setattr__(self, "attack", atk)

    @classmethod
    def from_labels(cls, scores, is_attack, dataset: str | None = None, split: str | None = None) -> "ScoreSet":
        scores = np.asarray(scores, dtype=np.float64)
        is_attack = np.asarray(is_attack, dtype=bool)
        return cls(scores[~is_attack], scores[is_attack], dataset, split)

    @property
    def n_bon(self) -> int:
        return self.bonafide.size

    @property
    def n_atk(self) -> int:
        return self.attack.size

    def all_scores(self) -> np.ndarray:
        return np.concatenate([self.bonafide, self.attack])


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def confusion_at(scores: ScoreSet, tau: float) -> ConfusionCounts:
    if scores.n_bon + scores.n_atk == 0:
        raise DataError("empty score set")
    if not math.isfinite(tau):
        raise ValueError(f"threshold must be finite, got {tau}")
    fn = int(np.count_nonzero(scores.attack >= tau))
    fp = int(np.count_nonzero(scores.bonafide < tau))
    return ConfusionCounts(tp=scores.n_atk - fn, tn=scores.n_bon - fp, fp=fp, fn=fn)


def _ratio(num: float, den: float) -> float:
    return num / den if den else NAN


def basic_metrics(c: ConfusionCounts) -> dict[str, float]:
    """Accuracy, precision, recall, F1, TNR, FPR, MCC and Cohen's kappa from counts."""
    n = c.total
    acc = _ratio(c.tp + c.tn, n)
    prec = _ratio(c.tp, c.tp + c.fp)
    rec = _ratio(c.tp, c.tp + c.fn)
    f1 = _ratio(2 * prec * rec, prec + rec) if not (math.isnan(prec) or math.isnan(rec)) else NAN
    tnr = _ratio(c.tn, c.tn + c.fp)
    fpr = _ratio(c.fp, c.fp + c.tn)
    den = float(c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn)
    mcc = (float(c.tp) * c.tn - float(c.fp) * c.fn) / math.sqrt(den) if den else NAN
    if n:
        pe = ((c.tp + c.fp) * (c.tp + c.fn) + (c.tn + c.fn) * (c.tn + c.fp)) / (n * n)
        kappa = (acc - pe) / (1 - pe) if pe != 1 else NAN
    else:
        kappa = NAN
    return {"accuracy": acc, "precision": prec, "recall": rec, "f1": f1, "tnr": tnr, "fpr": fpr, "mcc": mcc, "kappa": kappa}


class PadRates(NamedTuple):
    apcer: float
    bpcer: float
    acer: float


def pad_rates(scores: ScoreSet, tau: float) -> PadRates:
    apcer = _ratio(np.count_nonzero(scores.attack >= tau), scores.n_atk)
    bpcer = _ratio(np.count_nonzero(scores.bonafide < tau), scores.n_bon)
    return PadRates(apcer, bpcer, (apcer + bpcer) / 2)


def candidate_thresholds(scores: ScoreSet) -> np.ndarray:
    """Midpoints between consecutive distinct scores plus one point beyond each end."""
    u = np.unique(scores.all_scores())
    if u.size == 0:
        raise DataError("empty score set")
    return np.concatenate([[u[0] - 1.0], (u[:-1] + u[1:]) / 2, [u[-1] + 1.0]])


def _sweep(scores: ScoreSet, taus: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    atk = np.sort(scores.attack)
    bona = np.sort(scores.bonafide)
    apcer = (atk.size - np.searchsorted(atk, taus, side="left")) / atk.size
    bpcer = np.searchsorted(bona, taus, side="left") / bona.size
    return apcer, bpcer


def _require_both(scores: ScoreSet) -> None:
    if scores.n_bon == 0 or scores.n_atk == 0:
        raise DataError(f"both classes are required (bona fide={scores.n_bon}, attack={scores.n_atk})")


class EER(NamedTuple):
    value: float
    threshold: float
    degenerate: bool


def eer(scores: ScoreSet) -> EER:
    """Equal error rate over the midpoint sweep.

    If no candidate threshold gives APCER == BPCER exactly, the value is the
    linear interpolation of the crossing between the two bracketing
    candidates. The reported threshold is the lowest candidate minimizing
    |APCER - BPCER|.
    """
    _require_both(scores)
    taus = candidate_thresholds(scores)
    apcer, bpcer = _sweep(scores, taus)
    d = apcer - bpcer
    gap = np.abs(d)
    tau = float(taus[int(np.argmin(gap))])
    degenerate = np.unique(scores.all_scores()).size == 1
    k = int(np.argmax(d <= 0))  # d runs from +1 down to -1
    if d[k] == 0:
        value = float(apcer[k])
    else:
        t = d[k - 1] / (d[k - 1] - d[k])
        value = float(apcer[k - 1] + t * (apcer[k] - apcer[k - 1]))
    return EER(value, tau, degenerate)


def roc_auc(scores: ScoreSet) -> float:
    """Mann-Whitney AUC: probability a bona fide outscores an attack, ties counted 1/2."""
    _require_both(scores)
    allv = scores.all_scores()
    order = np.argsort(allv, kind="stable")
    sorted_v = allv[order]
    ranks = np.empty(allv.size, dtype=np.float64)
    # average ranks over ties
    uniq, start, counts = np.unique(sorted_v, return_index=True, return_counts=True)
    avg = start + (counts + 1) / 2.0
    ranks[order] = np.repeat(avg, counts)
    r_bona = ranks[: scores.n_bon].sum()
    u = r_bona - scores.n_bon * (scores.n_bon + 1) / 2.0
    return float(u / (scores.n_bon * scores.n_atk))


def pr_auc(scores: ScoreSet) -> float:
    """Average precision with attack as the positive class (low bona fide score = attack).

    Step integration over every distinct score u, predicting attack for s <= u.
    """
    _require_both(scores)
    u = np.unique(scores.all_scores())
    atk = np.sort(scores.attack)
    bona = np.sort(scores.bonafide)
    tp = np.searchsorted(atk, u, side="right").astype(np.float64)
    fp = np.searchsorted(bona, u, side="right").astype(np.float64)
    precision = tp / (tp + fp)
    recall = tp / atk.size
    steps = np.diff(np.concatenate([[0.0], recall]))
    return float(np.sum(steps * precision))


def curve_points(scores: ScoreSet) -> list[tuple[float, float, float]]:
    """(threshold, APCER, BPCER) at every candidate threshold, for DET/ROC CSVs."""
    taus = candidate_thresholds(scores)
    apcer, bpcer = _sweep(scores, taus)
    return [(float(t), float(a), float(b)) for t, a, b in zip(taus, apcer, bpcer)]


# --------------------------------------------------------------------------
# thresholds
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ThresholdPolicy:
    rule: str
    tau: float | None
    source_dataset: str | None = None
    source_split: str | None = None

    @classmethod
    def fixed(cls, tau: float) -> "ThresholdPolicy":
        return cls("fixed", float(tau))

    def resolved(self) -> float:
        if self.tau is None or not math.isfinite(self.tau):
            raise ProtocolViolation(f"threshold policy {self.rule!r} has not been resolved on a development set")
        return self.tau

    def fingerprint(self) -> str:
        return f"{self.rule}:{self.tau!r}:{self.source_dataset}:{self.source_split}"


def select_threshold(dev_scores: ScoreSet, rule: str) -> ThresholdPolicy:
    """Resolve a threshold on development data only; test splits are refused."""
    if dev_scores.split == "test":
        raise ProtocolViolation("thresholds may not be selected on a test split")
    if dev_scores.n_bon + dev_scores.n_atk == 0:
        raise DataError("empty development score set")
    if rule == "eer_on_dev":
        tau = eer(dev_scores).threshold
    elif rule == "min_acer_on_dev":
        _require_both(dev_scores)
        taus = candidate_thresholds(dev_scores)
        apcer, bpcer = _sweep(dev_scores, taus)
        acer = (apcer + bpcer) / 2
        tau = float(taus[int(np.argmin(acer))])  # argmin takes the lowest tau among ties
    else:
        raise ValueError(f"unknown threshold rule {rule!r}; expected eer_on_dev or min_acer_on_dev")
    return ThresholdPolicy(rule, tau, dev_scores.dataset, dev_scores.split)


def hter(scores: ScoreSet, policy: ThresholdPolicy | float) -> float:
    """(FAR + FRR) / 2 at a threshold fixed beforehand; FAR is APCER and FRR is BPCER."""
    if not isinstance(policy, ThresholdPolicy):
        policy = ThresholdPolicy.fixed(policy)
    r = pad_rates(scores, policy.resolved())
    return (r.apcer + r.bpcer) / 2


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------

@dataclass
class MetricReport:
    model: str = ""
    dataset: str = ""
    accuracy: float = NAN
    precision: float = NAN
    recall: float = NAN
    f1: float = NAN
    roc_auc: float = NAN
    pr_auc: float = NAN
    apcer: float = NAN
    bpcer: float = NAN
    acer: float = NAN
    eer: float = NAN
    hter: float = NAN
    mcc: float = NAN
    kappa: float = NAN
    tnr: float = NAN
    fpr: float = NAN
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0
    threshold: float = NAN
    threshold_rule: str = ""
    threshold_source: str = ""
    flags: str = ""

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def row(self) -> list[str]:
        return [_fmt(getattr(self, c)) for c in self.columns()]


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6f}"
    return str(v)


def evaluate(scores: ScoreSet, policy: ThresholdPolicy, model: str = "", dataset: str = "") -> MetricReport:
    """Every metric at the policy's fixed threshold plus the threshold-free curve metrics."""
    tau = policy.resolved()
    c = confusion_at(scores, tau)
    basic = basic_metrics(c)
    flags = [k for k, v in basic.items() if isinstance(v, float) and math.isnan(v)]
    rep = MetricReport(model=model, dataset=dataset or (scores.dataset or ""), tp=c.tp, tn=c.tn, fp=c.fp, fn=c.fn,
                       threshold=tau, threshold_rule=policy.rule,
                       threshold_source=f"{policy.source_dataset or ''}/{policy.source_split or ''}", **basic)
    if scores.n_bon and scores.n_atk:
        rates = pad_rates(scores, tau)
        rep.apcer, rep.bpcer, rep.acer = rates
        rep.hter = hter(scores, policy)
        e = eer(scores)
        rep.eer = e.value
        if e.degenerate:
            flags.append("constant_scores")
        rep.roc_auc = roc_auc(scores)
        rep.pr_auc = pr_auc(scores)
    else:
        flags.append("single_class")
    rep.flags = ";".join(flags)
    return rep


def reports_to_csv(reports: list[MetricReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MetricReport.columns())
    for r in reports:
        w.writerow(r.row())
    return buf.getvalue()


def reports_from_csv(text: str) -> list[MetricReport]:
    rows = list(csv.DictReader(io.StringIO(text)))
    out = []
    types = {f.name: f.type for f in fields(MetricReport)}
    for row in rows:
        kw = {}
        for k, v in row.items():
            t = types[k]
            kw[k] = float(v) if t == "float" else int(v) if t == "int" else v
        out.append(MetricReport(**kw))
    return out


# --------------------------------------------------------------------------
# score files
# --------------------------------------------------------------------------

SCORE_COLUMNS = ("sample_id", "label", "score")


def write_scores(path, ids, labels, scores) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCORE_COLUMNS)
        for i, lab, s in zip(ids, labels, scores):
            w.writerow([i, lab, repr(float(s))])


def read_scores(path, dataset: str | None = None, split: str | None = None) -> ScoreSet:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DataError(f"{path}: no scores")
    labels = [r["label"] for r in rows]
    bad = sorted(set(labels) - {"bonafide", "attack"})
    if bad:
        raise DataError(f"{path}: unknown labels {bad}")
    return ScoreSet.from_labels([float(r["score"]) for r in rows], [lab == "attack" for lab in labels], dataset, split)
