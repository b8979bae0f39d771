"""Sample manifests, leakage-free splitting, balancing and synthetic data.

Splits are made over *groups*: records sharing a video id or a subject id
are joined (transitively) into one group, and a group is always assigned
as a whole. After allocation every split is balanced by quality-aware
undersampling; records dropped by balancing are kept in the manifest with
split ``unassigned`` so the manifest still accounts for every input.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .errors import DataError, ProtocolViolation

BONAFIDE = "bonafide"
ATTACK = "attack"
LABELS = (BONAFIDE, ATTACK)
SPLITS = ("train", "val", "test", "unassigned")
RATIO_BOUNDS = (0.48, 0.52)

MANIFEST_MAGIC = "# livenesskit-manifest v1"
MANIFEST_COLUMNS = ("sample_id", "label", "subject", "video", "dataset", "composite", "split", "path")


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    label: str
    subject: str
    video: str | None = None
    dataset: str = ""
    composite: float | None = None
    split: str = "unassigned"
    path: str = ""

    def __post_init__(self):
        if self.label not in LABELS:
            raise DataError(f"{self.sample_id}: label must be one of {LABELS}, got {self.label!r}")
        if self.split not in SPLITS:
            raise DataError(f"{self.sample_id}: unknown split {self.split!r}")

    @property
    def is_attack(self) -> bool:
        return self.label == ATTACK


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


@dataclass
class SplitManifest:
    seed: int
    records: list[SampleRecord]
    provenance: dict = field(default_factory=dict)

    def split_records(self, split: str) -> list[SampleRecord]:
        return [r for r in self.records if r.split == split]

    def ids(self, split: str) -> list[str]:
        return [r.sample_id for r in self.split_records(split)]

    def class_counts(self, split: str) -> dict[str, int]:
        c = Counter(r.label for r in self.split_records(split))
        return {lab: c.get(lab, 0) for lab in LABELS}

    def attack_fraction(self, split: str) -> float:
        c = self.class_counts(split)
        n = c[BONAFIDE] + c[ATTACK]
        return c[ATTACK] / n if n else math.nan

    def roster(self, split: str) -> dict[str, list[str]]:
        recs = self.split_records(split)
        return {
            "subjects": sorted({r.subject for r in recs}),
            "videos": sorted({r.video for r in recs if r.video}),
        }

    def datasets(self) -> list[str]:
        return sorted({r.dataset for r in self.records})

    def validate(self, check_ratio: bool = True) -> None:
        """Raise ProtocolViolation on leakage, DataError on imbalance or duplication."""
        ids = [r.sample_id for r in self.records]
        dup = [k for k, v in Counter(ids).items() if v > 1]
        if dup:
            raise DataError(f"duplicate sample ids: {dup[:5]}")
        assigned = [r for r in self.records if r.split != "unassigned"]
        where: dict[tuple[str, str], set[str]] = defaultdict(set)
        video_datasets = {r.dataset for r in self.records if r.video}
        for r in assigned:
            if r.video:
                where[("video", f"{r.dataset}/{r.video}")].add(r.split)
            if r.dataset in video_datasets:
                where[("subject", f"{r.dataset}/{r.subject}")].add(r.split)
        leaks = sorted(f"{kind} {key} in {sorted(splits)}" for (kind, key), splits in where.items() if len(splits) > 1)
        if leaks:
            raise ProtocolViolation("group leakage across splits: " + "; ".join(leaks[:5]))
        if check_ratio:
            lo, hi = RATIO_BOUNDS
            for split in ("train", "val", "test"):
                if not self.split_records(split):
                    continue
                frac = self.attack_fraction(split)
                if not lo <= frac <= hi:
                    raise DataError(f"{split}: attack fraction {frac:.3f} outside [{lo}, {hi}]")

    # ---- text form ---------------------------------------------------------

    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write(MANIFEST_MAGIC + "\n")
        buf.write(f"# seed={self.seed}\n")
        buf.write(f"# provenance={json.dumps(self.provenance, sort_keys=True)}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        for r in sorted(self.records, key=lambda r: r.sample_id):
            comp = "" if r.composite is None else f"{r.composite:.6f}"
            w.writerow([r.sample_id, r.label, r.subject, r.video or "", r.dataset, comp, r.split, r.path])
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "SplitManifest":
        lines = text.splitlines()
        if not lines or lines[0] != MANIFEST_MAGIC:
            raise DataError("not a livenesskit manifest (bad header)")
        seed, prov, body_start = 0, {}, 1
        for i, line in enumerate(lines[1:], start=1):
            if not line.startswith("#"):
                body_start = i
                break
            if line.startswith("# seed="):
                seed = int(line.split("=", 1)[1])
            elif line.startswith("# provenance="):
                prov = json.loads(line.split("=", 1)[1])
        records = []
        for row in csv.DictReader(lines[body_start:]):
            records.append(SampleRecord(
                sample_id=row["sample_id"], label=row["label"], subject=row["subject"], video=row["video"] or None,
                dataset=row["dataset"], composite=float(row["composite"]) if row["composite"] else None,
                split=row["split"], path=row["path"],
            ))
        return cls(seed, records, prov)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path: str | Path) -> "SplitManifest":
        try:
            return cls.from_text(Path(path).read_text())
        except FileNotFoundError:
            raise DataError(f"manifest not found: {path}") from None

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()


# --------------------------------------------------------------------------
# grouping
# --------------------------------------------------------------------------

def group_keys(records: Sequence[SampleRecord]) -> list[str]:
    """Connected components over shared (dataset, video) and (dataset, subject) ids.

    Each group is named by its smallest member key so names do not depend
    on record order.
    """
    parent: dict[str, str] = {}

    def find(k: str) -> str:
        while parent[k] != k:
            parent[k] = parent[parent[k]]
            k = parent[k]
        return k

    def union(a: str, b: str) -> None:
        ra, rb = find(a), find(b)
        if ra != rb:
            lo, hi = sorted((ra, rb))
            parent[hi] = lo

    keys_per_record = []
    for r in records:
        keys = [f"s:{r.dataset}/{r.subject}"] if r.subject else []
        if r.video:
            keys.append(f"v:{r.dataset}/{r.video}")
        if not keys:
            keys = [f"r:{r.sample_id}"]
        for k in keys:
            parent.setdefault(k, k)
        for k in keys[1:]:
            union(keys[0], k)
        keys_per_record.append(keys[0])
    return [find(k) for k in keys_per_record]


def _allocate(groups: list[str], sizes: dict[str, int], frac_out: float) -> set[str]:
    """Pick groups (in the given order) for the held-out side, tracking |achieved - target|.

    A group goes out only if that strictly reduces the distance to the
    target, so ties keep it in. With two or more groups each side gets at
    least one.
    """
    total = sum(sizes[g] for g in groups)
    target = frac_out * total
    out: set[str] = set()
    n_out = 0
    for g in groups:
        if abs(n_out + sizes[g] - target) < abs(n_out - target):
            out.add(g)
            n_out += sizes[g]
    if len(groups) >= 2 and frac_out > 0:
        if not out:
            best = min(groups, key=lambda g: (abs(sizes[g] - target), groups.index(g)))
            out.add(best)
        elif len(out) == len(groups):
            out.discard(max(groups, key=lambda g: (sizes[g], -groups.index(g))))
    return out


def _split_groups(records: Sequence[SampleRecord], frac_out: float, rng: np.random.Generator) -> tuple[list[int], list[int]]:
    keys = group_keys(records)
    sizes = Counter(keys)
    labels_of: dict[str, set[str]] = defaultdict(set)
    for k, r in zip(keys, records):
        labels_of[k].add(r.label)
    for lab in LABELS:
        n = sum(1 for k in sizes if lab in labels_of[k])
        if n < 2:
            raise DataError(f"class {lab!r} has {n} group(s); at least 2 are needed to split without leakage")
    strata: dict[str, list[str]] = defaultdict(list)
    for k in sorted(sizes):
        strata["+".join(sorted(labels_of[k]))].append(k)
    out: set[str] = set()
    for name in sorted(strata):
        groups = strata[name]
        perm = rng.permutation(len(groups))
        out |= _allocate([groups[i] for i in perm], sizes, frac_out)
    keep_idx = [i for i, k in enumerate(keys) if k not in out]
    out_idx = [i for i, k in enumerate(keys) if k in out]
    return keep_idx, out_idx


def quality_undersample(records: Sequence[SampleRecord], seed: int | None = None) -> list[SampleRecord]:
    """Trim the majority class to the minority size, keeping the highest composite scores.

    Ties (and missing scores, treated as -inf) are broken by sample id. The
    returned list keeps the input order. ``seed`` is accepted for interface
    symmetry; the operation is deterministic without it.
    """
    by_label = {lab: [r for r in records if r.label == lab] for lab in LABELS}
    empty = [lab for lab, rs in by_label.items() if not rs]
    if empty:
        raise DataError(f"cannot balance: class {empty[0]!r} is empty")
    n = min(len(rs) for rs in by_label.values())
    keep: set[str] = set()
    for rs in by_label.values():
        ranked = sorted(rs, key=lambda r: (-(r.composite if r.composite is not None else -math.inf), r.sample_id))
        keep.update(r.sample_id for r in ranked[:n])
    return [r for r in records if r.sample_id in keep]


def _balanced(records: list[SampleRecord], split: str) -> tuple[list[SampleRecord], list[SampleRecord]]:
    kept = quality_undersample(records)
    kept_ids = {r.sample_id for r in kept}
    assigned = [replace(r, split=split) for r in kept]
    dropped = [replace(r, split="unassigned") for r in records if r.sample_id not in kept_ids]
    return assigned, dropped


def group_split(records: Sequence[SampleRecord], train_frac: float = 0.80, seed: int = 42,
                val_frac: float = 0.15, balance: bool = True) -> SplitManifest:
    """Whole-group train/test split, then a grouped validation carve-out from train."""
    if not 0 < train_frac < 1:
        raise ValueError(f"train_frac must be in (0, 1), got {train_frac}")
    records = list(records)
    rng = np.random.default_rng(seed)
    train_idx, test_idx = _split_groups(records, 1.0 - train_frac, rng)
    train = [records[i] for i in train_idx]
    test = [records[i] for i in test_idx]
    val: list[SampleRecord] = []
    if val_frac > 0:
        keep_idx, val_idx = _split_groups(train, val_frac, rng)
        val = [train[i] for i in val_idx]
        train = [train[i] for i in keep_idx]
    out: list[SampleRecord] = []
    for split, recs in (("train", train), ("val", val), ("test", test)):
        if not recs:
            continue
        if balance:
            assigned, dropped = _balanced(recs, split)
            out += assigned + dropped
        else:
            out += [replace(r, split=split) for r in recs]
    prov = {"op": "group_split", "train_frac": train_frac, "val_frac": val_frac, "balance": balance,
            "input": config_hash(sorted(r.sample_id for r in records)), "version": __version__}
    manifest = SplitManifest(seed, out, prov)
    manifest.validate(check_ratio=balance)
    return manifest


def stratified_split(records: Sequence[SampleRecord], fractions: dict[str, float] | None = None,
                     seed: int = 42) -> SplitManifest:
    """Per-class proportional allocation for still-image datasets (largest remainder)."""
    fractions = fractions or {"train": 0.8, "test": 0.2}
    if abs(sum(fractions.values()) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions}")
    records = list(records)
    if any(r.video for r in records):
        raise DataError("stratified_split is for image datasets; use group_split for video-derived records")
    rng = np.random.default_rng(seed)
    names = list(fractions)
    out: list[SampleRecord] = []
    for lab in LABELS:
        recs = sorted((r for r in records if r.label == lab), key=lambda r: r.sample_id)
        if len(recs) < len(names):
            raise DataError(f"class {lab!r} has {len(recs)} records, fewer than {len(names)} splits")
        counts = _largest_remainder(len(recs), [fractions[s] for s in names])
        perm = rng.permutation(len(recs))
        start = 0
        for split, n in zip(names, counts):
            out += [replace(recs[i], split=split) for i in perm[start:start + n]]
            start += n
    prov = {"op": "stratified_split", "fractions": fractions, "input": config_hash(sorted(r.sample_id for r in records)),
            "version": __version__}
    manifest = SplitManifest(seed, out, prov)
    manifest.validate(check_ratio=False)
    return manifest


def _largest_remainder(total: int, fracs: Sequence[float]) -> list[int]:
    raw = [total * f for f in fracs]
    counts = [int(math.floor(x)) for x in raw]
    order = sorted(range(len(fracs)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: total - sum(counts)]:
        counts[i] += 1
    return counts


def combined_split_sizes(total: int, train_frac: float = 0.8) -> tuple[int, int]:
    train = int(round(train_frac * total))
    return train, total - train


def combine_datasets(manifests: Sequence[SplitManifest], train_frac: float = 0.8, seed: int = 42,
                     val_frac: float = 0.15) -> SplitManifest:
    """Pool several sources and re-split 80/20, stratified by (source, label) and grouped.

    Each stratum's test quota comes from a largest-remainder allocation of
    the overall test size, so with singleton groups the pooled train size is
    exactly round(train_frac * total). A grouped validation carve-out is
    then taken from the pooled train side.
    """
    if len(manifests) < 2:
        raise DataError("combine_datasets needs at least two source manifests")
    pool: list[SampleRecord] = []
    seen: dict[str, str] = {}
    for m in manifests:
        for r in m.records:
            if r.split == "unassigned" and m.provenance.get("op") != "source":
                continue
            if r.sample_id in seen:
                raise DataError(f"sample id collision: {r.sample_id!r} in {seen[r.sample_id]!r} and {r.dataset!r}")
            seen[r.sample_id] = r.dataset
            pool.append(replace(r, split="unassigned"))
    total = len(pool)
    _, n_test = combined_split_sizes(total, train_frac)
    rng = np.random.default_rng(seed)
    keys = group_keys(pool)
    strata: dict[tuple[str, str], list[int]] = defaultdict(list)
    for i, r in enumerate(pool):
        strata[(r.dataset, r.label)].append(i)
    names = sorted(strata)
    quotas = _largest_remainder(n_test, [len(strata[s]) / total for s in names])
    test_groups: set[str] = set()
    for name, quota in zip(names, quotas):
        idx = strata[name]
        sizes = Counter(keys[i] for i in idx)
        groups = sorted(sizes)
        groups = [groups[i] for i in rng.permutation(len(groups))]
        already = sum(n for g, n in sizes.items() if g in test_groups)
        n_out = already
        for g in groups:
            if g in test_groups:
                continue
            if abs(n_out + sizes[g] - quota) < abs(n_out - quota):
                test_groups.add(g)
                n_out += sizes[g]
    train = [r for k, r in zip(keys, pool) if k not in test_groups]
    test = [replace(r, split="test") for k, r in zip(keys, pool) if k in test_groups]
    val: list[SampleRecord] = []
    if val_frac > 0:
        keep_idx, val_idx = _split_groups(train, val_frac, rng)
        val = [replace(train[i], split="val") for i in val_idx]
        train = [train[i] for i in keep_idx]
    train = [replace(r, split="train") for r in train]
    prov = {"op": "combine_datasets", "sources": sorted({r.dataset for r in pool}), "train_frac": train_frac,
            "val_frac": val_frac, "total": total, "version": __version__,
            "inputs": [m.digest()[:16] for m in manifests]}
    manifest = SplitManifest(seed, train + val + test, prov)
    manifest.validate(check_ratio=False)
    return manifest


def source_manifest(records: Iterable[SampleRecord], seed: int = 42) -> SplitManifest:
    """Wrap unsplit records so they can be pooled by combine_datasets."""
    return SplitManifest(seed, [replace(r, split="unassigned") for r in records], {"op": "source"})


# --------------------------------------------------------------------------
# synthetic data
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DomainParams:
    """Acquisition conditions for one synthetic "dataset".

    Attack presentations carry a periodic print/screen artifact (two
    superposed gratings at slightly different frequencies, which beat into
    a moire pattern), a damped specular highlight and a compressed tonal
    range.
    """

    name: str = "synthA"
    size: int = 64
    render_size: int = 64
    noise_sigma: float = 4.0
    illumination: float = 1.0
    illumination_jitter: float = 0.08
    color_cast: tuple[float, float, float] = (1.0, 1.0, 1.0)
    moire_period: float = 3.2
    moire_angle: float = 90.0
    moire_beat: float = 0.08
    moire_amplitude: float = 22.0
    specular_bona: float = 60.0
    specular_attack: float = 20.0
    tone_compression: float = 0.85

    def __post_init__(self):
        if self.size < 8 or self.render_size < 8:
            raise DataError("synthetic images must be at least 8x8")
        if self.noise_sigma < 0 or self.moire_period <= 1.0 or self.illumination <= 0:
            raise DataError(f"degenerate synthetic parameters: {self}")


DOMAIN_A = DomainParams()
DOMAIN_B = DomainParams(
    name="synthB", render_size=48, noise_sigma=6.0, illumination=0.8, color_cast=(1.08, 1.0, 0.88),
    moire_period=9.0, moire_angle=35.0, moire_beat=0.02, moire_amplitude=14.0,
    specular_bona=25.0, specular_attack=70.0, tone_compression=0.95,
)


def _subject_traits(seed: int, dataset: str, subject: int) -> dict:
    rng = np.random.default_rng([seed, _stable_int(dataset), subject, 7])
    return {
        "skin": rng.uniform([150, 100, 80], [235, 190, 160]),
        "bg": rng.uniform(30, 200, size=3),
        "face_rx": rng.uniform(0.26, 0.34),
        "face_ry": rng.uniform(0.34, 0.42),
        "eye_dy": rng.uniform(-0.12, -0.06),
        "eye_dx": rng.uniform(0.10, 0.15),
        "light_dir": rng.uniform(-1, 1, size=2),
    }


def _stable_int(s: str) -> int:
    return int(hashlib.sha256(s.encode()).hexdigest()[:8], 16)


def render_synthetic(params: DomainParams, traits: dict, attack: bool, rng: np.random.Generator) -> np.ndarray:
    n = params.render_size
    yy, xx = np.mgrid[0:n, 0:n] / (n - 1.0)
    cx, cy = 0.5 + rng.normal(0, 0.02), 0.5 + rng.normal(0, 0.02)
    dx, dy = xx - cx, yy - cy
    face = ((dx / traits["face_rx"]) ** 2 + (dy / traits["face_ry"]) ** 2) <= 1.0
    shade = 1.0 + 0.25 * (traits["light_dir"][0] * dx + traits["light_dir"][1] * dy) / 0.5
    img = np.empty((n, n, 3))
    bg_grad = 0.85 + 0.3 * yy
    for ch in range(3):
        img[..., ch] = np.where(face, traits["skin"][ch] * shade, traits["bg"][ch] * bg_grad)
    for sx in (-1, 1):
        eye = ((dx - sx * traits["eye_dx"]) / 0.05) ** 2 + ((dy - traits["eye_dy"]) / 0.03) ** 2 <= 1.0
        img[eye] = (40, 30, 30)
    mouth = ((dx / 0.09) ** 2 + ((dy - 0.17) / 0.025) ** 2) <= 1.0
    img[mouth] = (150, 60, 60)
    # specular highlight on the forehead/cheek
    hx, hy = cx + 0.08 * traits["light_dir"][0], cy - 0.15
    spec_gain = params.specular_attack if attack else params.specular_bona
    img += (spec_gain * np.exp(-(((xx - hx) ** 2 + (yy - hy) ** 2) / (2 * 0.05 ** 2))) * face)[..., None]
    if attack:
        theta = math.radians(params.moire_angle + rng.normal(0, 3))
        u = xx * (n - 1) * math.cos(theta) + yy * (n - 1) * math.sin(theta)
        f1 = 1.0 / params.moire_period
        f2 = f1 * (1.0 + params.moire_beat)
        phase = rng.uniform(0, 2 * math.pi)
        grating = 0.5 * (np.sin(2 * math.pi * f1 * u + phase) + np.sin(2 * math.pi * f2 * u))
        img += params.moire_amplitude * grating[..., None]
        mean = img.mean()
        img = mean + params.tone_compression * (img - mean)
    gain = params.illumination * (1.0 + rng.normal(0, params.illumination_jitter))
    img = img * gain * np.asarray(params.color_cast)
    img = np.clip(img, 0, 255)
    if n != params.size:
        import cv2

        img = cv2.resize(img, (params.size, params.size), interpolation=cv2.INTER_LINEAR)
    img = img + rng.normal(0, params.noise_sigma, img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


@dataclass
class SyntheticSet:
    records: list[SampleRecord]
    images: dict[str, np.ndarray]
    params: DomainParams

    def arrays(self, records: Sequence[SampleRecord]) -> tuple[np.ndarray, np.ndarray]:
        x = np.stack([self.images[r.sample_id] for r in records]) if records else np.zeros((0, 1, 1, 3), np.uint8)
        y = np.array([int(r.is_attack) for r in records], dtype=np.int64)
        return x, y


def synth_generate(n_subjects: int, frames_per_subject: int, domain_params: DomainParams = DOMAIN_A,
                   seed: int = 42, videos_per_class: int = 1, with_quality: bool = True) -> SyntheticSet:
    """Render bona fide and attack frames for ``n_subjects`` synthetic identities.

    Every subject gets ``videos_per_class`` bona fide and as many attack
    videos, each holding ``frames_per_subject // videos_per_class`` frames.
    Pixel content depends only on (seed, dataset name, subject, class,
    video, frame), so generation is byte-reproducible and order-free.
    """
    if n_subjects < 2:
        raise DataError("need at least 2 subjects per class")
    if frames_per_subject < 1 or videos_per_class < 1 or frames_per_subject < videos_per_class:
        raise DataError("frames_per_subject must be >= videos_per_class >= 1")
    from .imgproc import composite_quality

    p = domain_params
    frames = frames_per_subject // videos_per_class
    records: list[SampleRecord] = []
    images: dict[str, np.ndarray] = {}
    ds = _stable_int(p.name)
    for s in range(n_subjects):
        traits = _subject_traits(seed, p.name, s)
        subject = f"s{s:03d}"
        for li, label in enumerate(LABELS):
            for v in range(videos_per_class):
                video = f"{subject}_{label[:3]}{v}"
                for f in range(frames):
                    rng = np.random.default_rng([seed, ds, s, li, v, f])
                    img = render_synthetic(p, traits, label == ATTACK, rng)
                    rel = f"{label}/{subject}/{video}/f{f:03d}"
                    sid = f"{p.name}/{rel}"
                    images[sid] = img
                    comp = composite_quality(img).composite if with_quality else None
                    records.append(SampleRecord(sid, label, subject, video, p.name, comp, "unassigned", rel + ".png"))
    return SyntheticSet(records, images, p)


def write_dataset_tree(root: str | Path, synth: SyntheticSet) -> None:
    """Materialize images as dataset/<class>/<subject>/<video>/<frame>.png."""
    from .imgproc import write_image

    root = Path(root)
    for r in synth.records:
        write_image(root / r.path, synth.images[r.sample_id])


def scan_dataset_tree(root: str | Path, dataset: str | None = None) -> list[SampleRecord]:
    """Records for every image under root/<class>/<subject>/<video>/<frame>.{png,bmp}."""
    root = Path(root)
    dataset = dataset or root.name
    records = []
    for path in sorted(p for p in root.rglob("*") if p.suffix.lower() in (".png", ".bmp")):
        rel = path.relative_to(root)
        parts = rel.parts
        if len(parts) not in (3, 4) or parts[0] not in LABELS:
            raise DataError(f"{rel}: expected <class>/<subject>/[<video>/]<frame>")
        video = parts[2] if len(parts) == 4 else None
        sid = f"{dataset}/{rel.with_suffix('').as_posix()}"
        records.append(SampleRecord(sid, parts[0], parts[1], video, dataset, None, "unassigned", rel.as_posix()))
    return records
