"""Detection metrics: greedy matching, all-point AP, FNR/FDR, fitness, size filtering,
false-positive analysis and improvement ledgers.

Everything is single-class and works on :class:`~fusionnet.boxes.Detection` /
:class:`~fusionnet.boxes.GroundTruth` records in original-image pixels.
"""
from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .boxes import Detection, GroundTruth, box_iou, xywh_to_xyxy, xyxy_to_xywh

METRIC_NAMES = ("map25", "map50", "fnr", "fdr")
INTERPOLATION = "all-point"

iou = box_iou


# --------------------------------------------------------------------------- matching


@dataclass(frozen=True)
class MatchRecord:
    image_id: str
    kind: str  # "TP", "FP" or "FN"
    box: tuple[float, float, float, float]  # detection box for TP/FP, ground truth for FN
    confidence: float | None = None
    iou: float | None = None
    gt_box: tuple[float, float, float, float] | None = None

    @property
    def width(self) -> float:
        return self.box[2] - self.box[0]

    @property
    def height(self) -> float:
        return self.box[3] - self.box[1]


@dataclass
class MatchResult:
    tp: int
    fp: int
    fn: int
    records: list[MatchRecord]

    @property
    def fnr(self) -> float:
        return self.fn / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def fdr(self) -> float:
        return self.fp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    def flags(self) -> list[str]:
        out = []
        if self.tp + self.fp == 0:
            out.append("fdr_undefined_no_predictions")
        if self.tp + self.fn == 0:
            out.append("fnr_undefined_no_ground_truth")
        return out


def _check_unit(name: str, v: float):
    if not 0.0 <= v <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {v}")


def _group(items: Iterable) -> dict[str, list]:
    out: dict[str, list] = defaultdict(list)
    for it in items:
        out[it.image_id].append(it)
    return out


def _match_image(dets: list[Detection], gts: list[GroundTruth], iou_thr: float):
    """Greedy matching in descending confidence (stable); returns [(det, gt_index | None, iou)], matched flags."""
    order = sorted(range(len(dets)), key=lambda i: -dets[i].confidence)
    taken = [False] * len(gts)
    out = []
    for i in order:
        d = dets[i]
        best, best_iou = None, iou_thr
        for j, g in enumerate(gts):
            if taken[j]:
                continue
            v = box_iou(d.box, g.box)
            if v >= best_iou and (best is None or v > best_iou):
                best, best_iou = j, v
        if best is not None:
            taken[best] = True
            out.append((d, best, best_iou))
        else:
            out.append((d, None, None))
    return out, taken


def match_and_count(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    iou_thr: float = 0.5,
    conf_thr: float = 0.25,
) -> MatchResult:
    """Per-image greedy matching of detections with ``confidence >= conf_thr``.

    Detections are visited by descending confidence; each takes the unmatched ground
    truth of highest IoU (ties: lowest index) if that IoU reaches ``iou_thr``.
    """
    _check_unit("iou_thr", iou_thr)
    _check_unit("conf_thr", conf_thr)
    dets_by = _group(d for d in dets if d.confidence >= conf_thr)
    gts_by = _group(gts)
    tp = fp = fn = 0
    records: list[MatchRecord] = []
    for image_id in sorted(set(dets_by) | set(gts_by)):
        g = gts_by.get(image_id, [])
        pairs, taken = _match_image(dets_by.get(image_id, []), g, iou_thr)
        for d, j, v in pairs:
            if j is None:
                fp += 1
                records.append(MatchRecord(image_id, "FP", tuple(d.box), d.confidence))
            else:
                tp += 1
                records.append(MatchRecord(image_id, "TP", tuple(d.box), d.confidence, v, tuple(g[j].box)))
        for j, hit in enumerate(taken):
            if not hit:
                fn += 1
                records.append(MatchRecord(image_id, "FN", tuple(g[j].box)))
    return MatchResult(tp, fp, fn, records)


# --------------------------------------------------------------------------- AP


@dataclass
class APResult:
    ap: float
    precision: np.ndarray
    recall: np.ndarray
    confidence: np.ndarray
    flags: list[str] = field(default_factory=list)


def average_precision_detail(dets: Sequence[Detection], gts: Sequence[GroundTruth], iou_thr: float) -> APResult:
    """All-point interpolated AP over the confidence-ranked PR curve."""
    _check_unit("iou_thr", iou_thr)
    n_gt = len(gts)
    empty = np.zeros(0)
    if n_gt == 0:
        if len(dets) == 0:
            return APResult(1.0, empty, empty, empty, ["ap_no_ground_truth_no_predictions"])
        return APResult(0.0, empty, empty, empty, ["ap_no_ground_truth"])
    gts_by = _group(gts)
    hits = []  # (confidence, is_tp)
    for image_id, ds in _group(dets).items():
        pairs, _ = _match_image(ds, gts_by.get(image_id, []), iou_thr)
        hits.extend((d.confidence, j is not None) for d, j, _ in pairs)
    if not hits:
        return APResult(0.0, empty, empty, empty, ["ap_no_predictions"])
    # stable: equal confidences keep per-image greedy order
    hits.sort(key=lambda h: -h[0])
    conf = np.array([h[0] for h in hits])
    tp = np.cumsum([h[1] for h in hits], dtype=np.float64)
    fp = np.cumsum([not h[1] for h in hits], dtype=np.float64)
    recall = tp / n_gt
    precision = tp / (tp + fp)
    # precision envelope, then sum over recall increments
    mrec = np.concatenate([[0.0], recall])
    mpre = np.concatenate([[0.0], precision])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    idx = np.flatnonzero(mrec[1:] != mrec[:-1])
    ap = float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))
    return APResult(ap, precision, recall, conf)


def average_precision(dets: Sequence[Detection], gts: Sequence[GroundTruth], iou_thr: float = 0.5) -> float:
    return average_precision_detail(dets, gts, iou_thr).ap


# --------------------------------------------------------------------------- fitness


@dataclass(frozen=True)
class FitnessWeights:
    a_fnr: float = 0.45
    a_fdr: float = 0.35
    a_map25: float = 0.10
    a_map50: float = 0.10

    def __post_init__(self):
        vals = (self.a_fnr, self.a_fdr, self.a_map25, self.a_map50)
        if min(vals) < 0:
            raise ValueError(f"fitness weights must be non-negative: {vals}")
        if abs(sum(vals) - 1.0) > 1e-9:
            raise ValueError(f"fitness weights must sum to 1, got {sum(vals)}")

    @classmethod
    def from_metric_order(cls, map25, map50, fnr, fdr) -> "FitnessWeights":
        return cls(fnr, fdr, map25, map50)


# named presets; the sensitivity rows list weights for (mAP25, mAP50, FNR, FDR)
FITNESS_PRESETS = {
    "default": FitnessWeights(),
    "supp10-row1": FitnessWeights.from_metric_order(0.025, 0.025, 0.50, 0.45),
    "supp10-row2": FitnessWeights.from_metric_order(0.05, 0.05, 0.50, 0.40),
    "supp10-row3": FitnessWeights.from_metric_order(0.10, 0.10, 0.45, 0.35),
    "supp10-row4": FitnessWeights.from_metric_order(0.15, 0.15, 0.40, 0.30),
    "supp10-row5": FitnessWeights.from_metric_order(0.20, 0.20, 0.35, 0.25),
}
SENSITIVITY_PRESETS = [f"supp10-row{i}" for i in range(1, 6)]


def get_fitness_weights(name_or_weights) -> FitnessWeights:
    if isinstance(name_or_weights, FitnessWeights):
        return name_or_weights
    try:
        return FITNESS_PRESETS[name_or_weights]
    except KeyError:
        raise ValueError(f"unknown fitness preset {name_or_weights!r}; choose from {sorted(FITNESS_PRESETS)}") from None


def fitness(map25: float, map50: float, fnr: float, fdr: float, weights: FitnessWeights = FitnessWeights()) -> float:
    """``a_fnr (1 - FNR) + a_fdr (1 - FDR) + a_map25 mAP25 + a_map50 mAP50``."""
    for name, v in zip(METRIC_NAMES, (map25, map50, fnr, fdr)):
        _check_unit(name, v)
    w = weights
    return w.a_fnr * (1 - fnr) + w.a_fdr * (1 - fdr) + w.a_map25 * map25 + w.a_map50 * map50


@dataclass
class SensitivityReport:
    averages: dict[str, dict]  # preset -> config -> mean fitness
    argmax: dict[str, object]
    stable: bool

    def to_dict(self):
        return {"averages": {p: {str(k): v for k, v in a.items()} for p, a in self.averages.items()},
                "argmax": {p: str(v) for p, v in self.argmax.items()}, "stable": self.stable}


def fitness_sensitivity(config_metrics: Mapping[object, Sequence[Sequence[float]]], presets: Mapping[str, FitnessWeights]) -> SensitivityReport:
    """Mean fitness of each configuration (over its metric quadruples) under each preset."""
    if len(presets) < 1:
        raise ValueError("need at least one weight preset")
    averages, argmax = {}, {}
    for name, w in presets.items():
        avg = {cfg: float(np.mean([fitness(*q, weights=w) for q in quads])) for cfg, quads in config_metrics.items()}
        averages[name] = avg
        argmax[name] = max(avg, key=avg.get)
    return SensitivityReport(averages, argmax, len(set(argmax.values())) == 1)


# --------------------------------------------------------------------------- size filter


def size_filter(instances: Iterable, min_side_px: float = 16, scale=1.0) -> list:
    """Keep instances whose width and height are both ``>= min_side_px`` at original resolution.

    ``scale`` (scalar or ``(sx, sy)``) converts the instances' pixel units to original-resolution pixels.
    """
    sx, sy = (scale, scale) if np.isscalar(scale) else scale
    return [it for it in instances if it.width * sx >= min_side_px and it.height * sy >= min_side_px]


# --------------------------------------------------------------------------- FP analysis


@dataclass
class DimensionStats:
    n: int
    mean_w: float
    std_w: float
    mean_h: float
    std_h: float


@dataclass
class FPAnalysis:
    heatmaps: dict[str, np.ndarray]  # fov -> grid of FP centre counts
    stats: dict[str, DimensionStats]  # "TP" / "FP" / "FN"
    scatter: dict[str, np.ndarray]  # kind -> (n, 2) widths and heights
    cell: int


def _dims(records: list[MatchRecord]) -> np.ndarray:
    return np.array([(r.width, r.height) for r in records], dtype=np.float64).reshape(-1, 2)


def fp_analysis(
    records: Sequence[MatchRecord],
    fov_of: Mapping[str, str] | Callable[[str], str],
    image_size: Mapping[str, tuple[int, int]] | tuple[int, int],
    cell: int = 16,
) -> FPAnalysis:
    """FP centre heatmaps per field of view plus width/height statistics per match kind."""
    lookup = fov_of if callable(fov_of) else fov_of.__getitem__
    size_of = (lambda fov: image_size) if isinstance(image_size, tuple) else image_size.__getitem__
    heatmaps: dict[str, np.ndarray] = {}
    for r in records:
        if r.kind != "FP":
            continue
        fov = lookup(r.image_id)
        w, h = size_of(fov)
        grid = heatmaps.setdefault(fov, np.zeros((math.ceil(h / cell), math.ceil(w / cell)), dtype=np.int64))
        cx, cy = (r.box[0] + r.box[2]) / 2, (r.box[1] + r.box[3]) / 2
        gx = min(max(int(cx // cell), 0), grid.shape[1] - 1)
        gy = min(max(int(cy // cell), 0), grid.shape[0] - 1)
        grid[gy, gx] += 1
    stats, scatter = {}, {}
    for kind in ("TP", "FP", "FN"):
        d = _dims([r for r in records if r.kind == kind])
        scatter[kind] = d
        if len(d):
            stats[kind] = DimensionStats(len(d), float(d[:, 0].mean()), float(d[:, 0].std()), float(d[:, 1].mean()), float(d[:, 1].std()))
        else:
            stats[kind] = DimensionStats(0, math.nan, math.nan, math.nan, math.nan)
    return FPAnalysis(heatmaps, stats, scatter, cell)


# --------------------------------------------------------------------------- reports


@dataclass
class MetricReport:
    map25: float
    map50: float
    fnr: float
    fdr: float
    fitness: float
    tp: int = 0
    fp: int = 0
    fn: int = 0
    records: list[MatchRecord] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)
    weights: FitnessWeights = FitnessWeights()
    settings: dict = field(default_factory=dict)

    @classmethod
    def from_metrics(cls, map25, map50, fnr, fdr, weights: FitnessWeights = FitnessWeights()) -> "MetricReport":
        return cls(map25, map50, fnr, fdr, fitness(map25, map50, fnr, fdr, weights), weights=weights)

    def quad(self) -> tuple[float, float, float, float]:
        return (self.map25, self.map50, self.fnr, self.fdr)

    def recompute_fitness(self) -> float:
        return fitness(*self.quad(), weights=self.weights)

    def to_dict(self, with_records: bool = False) -> dict:
        d = {
            "metrics": {"map25": self.map25, "map50": self.map50, "fnr": self.fnr, "fdr": self.fdr, "fitness": self.fitness},
            "counts": {"tp": self.tp, "fp": self.fp, "fn": self.fn},
            "flags": list(self.flags),
            "fitness_weights": asdict(self.weights),
            "interpolation": INTERPOLATION,
            "settings": dict(self.settings),
        }
        if with_records:
            d["records"] = [asdict(r) for r in self.records]
        return d

    def save(self, path, with_records: bool = True):
        Path(path).write_text(json.dumps(self.to_dict(with_records), indent=2, sort_keys=True) + "\n")


def evaluate(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    weights: FitnessWeights = FitnessWeights(),
    iou_thr: float = 0.5,
    conf_thr: float = 0.25,
    size_filter_px: float | None = None,
    scale=1.0,
) -> MetricReport:
    """mAP@0.25/0.5 over all detections; FNR/FDR from matching at ``iou_thr`` and ``conf_thr``.

    With ``size_filter_px`` set, small ground truth and predictions are removed before matching.
    """
    if size_filter_px is not None:
        dets = size_filter(dets, size_filter_px, scale)
        gts = size_filter(gts, size_filter_px, scale)
    a25 = average_precision_detail(dets, gts, 0.25)
    a50 = average_precision_detail(dets, gts, 0.5)
    m = match_and_count(dets, gts, iou_thr, conf_thr)
    flags = sorted(set(m.flags() + a25.flags + a50.flags))
    settings = {"iou_thr": iou_thr, "conf_thr": conf_thr, "size_filter_px": size_filter_px}
    return MetricReport(
        a25.ap, a50.ap, m.fnr, m.fdr, fitness(a25.ap, a50.ap, m.fnr, m.fdr, weights),
        m.tp, m.fp, m.fn, m.records, flags, weights, settings,
    )


# --------------------------------------------------------------------------- ledger


@dataclass
class LedgerTable:
    names: list[str]
    baseline: tuple[float, ...]
    steps: list[tuple[Fraction, ...]]  # exact per-step deltas
    total: tuple[Fraction, ...]

    def step_floats(self) -> list[tuple[float, ...]]:
        return [tuple(round(float(v), 6) for v in s) for s in self.steps]

    def total_floats(self) -> tuple[float, ...]:
        return tuple(round(float(v), 6) for v in self.total)

    def rows(self):
        yield ("baseline", *self.baseline)
        for name, s in zip(self.names, self.step_floats()):
            yield (name, *s)
        yield ("total", *self.total_floats())


def _exact(v) -> Fraction:
    # decimal literal of the float, so 0.1 - 0.3 telescopes exactly
    return Fraction(repr(float(v)))


def improvement_ledger(baseline, steps: Sequence, names: Sequence[str] | None = None) -> LedgerTable:
    """Per-step deltas ``steps[i] - steps[i-1]`` (first against the baseline) and the total.

    Entries may be :class:`MetricReport` objects or metric quadruples. Arithmetic is exact
    on the decimal values, so the deltas always telescope to the total.
    """
    if len(steps) < 1:
        raise ValueError("ledger needs at least one step")
    as_quad = lambda r: r.quad() if isinstance(r, MetricReport) else tuple(r)
    chain = [tuple(_exact(v) for v in as_quad(r)) for r in [baseline, *steps]]
    deltas = [tuple(b - a for a, b in zip(prev, cur)) for prev, cur in zip(chain, chain[1:])]
    total = tuple(b - a for a, b in zip(chain[0], chain[-1]))
    names = list(names) if names is not None else [f"step {i + 1}" for i in range(len(steps))]
    return LedgerTable(names, as_quad(baseline), deltas, total)


# --------------------------------------------------------------------------- files


def write_predictions(path, dets: Iterable[Detection]):
    """One line per detection: ``image_id x y w h confidence``."""
    with open(path, "w") as f:
        for d in dets:
            x, y, w, h = xyxy_to_xywh(d.box)
            f.write(f"{d.image_id} {x:.3f} {y:.3f} {w:.3f} {h:.3f} {d.confidence:.6f}\n")


def read_predictions(path) -> list[Detection]:
    out = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 6:
            raise ValueError(f"{path}:{n}: expected 6 fields, got {len(parts)}")
        x, y, w, h, c = (float(p) for p in parts[1:])
        if not 0.0 <= c <= 1.0:
            raise ValueError(f"{path}:{n}: confidence {c} outside [0, 1]")
        out.append(Detection(parts[0], xywh_to_xyxy((x, y, w, h)), c))
    return out
