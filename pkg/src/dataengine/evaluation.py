"""Detection metrics, model comparison and checkpoint selection."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import DatasetManifest, Detection, GroundTruth, iou
from .errors import MissingMetric, ParseError, ZeroBaseline

REPORT_METRICS = ("map", "f1", "precision", "recall")


@dataclass(frozen=True)
class MatchConfig:
    iou_threshold: float = 0.5
    confidence_threshold: float = 0.5

    def __post_init__(self) -> None:
        for name in ("iou_threshold", "confidence_threshold"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must be in (0, 1], got {v}")


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __iadd__(self, other: Counts) -> Counts:
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn
        return self

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.tp, self.fp, self.fn)


def prf1(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """Precision, recall and F1 from raw counts; empty denominators give 0."""
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return precision, recall, f1_score(precision, recall)


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def greedy_match(
    preds: Sequence[Detection],
    gt: Sequence[GroundTruth],
    iou_threshold: float,
) -> tuple[list[tuple[Detection, bool]], dict[str, int]]:
    """Match one frame's predictions to its ground truth, class by class.

    Predictions are visited by descending confidence (input order on ties);
    each takes the unmatched same-class ground-truth box with the highest
    IoU at or above the threshold, the earliest box winning IoU ties.

    Returns ``(pred, is_tp)`` pairs in visiting order and the number of
    unmatched ground-truth boxes per class.
    """
    gt_by_class: dict[str, list[int]] = {}
    for i, g in enumerate(gt):
        gt_by_class.setdefault(g.label, []).append(i)
    order = sorted(range(len(preds)), key=lambda i: -preds[i].confidence)
    taken = [False] * len(gt)
    results = []
    for i in order:
        p = preds[i]
        best, best_iou = -1, iou_threshold
        for j in gt_by_class.get(p.label, ()):
            if taken[j]:
                continue
            v = iou(p.box, gt[j].box)
            if v >= best_iou and (best < 0 or v > best_iou):
                best, best_iou = j, v
        if best >= 0:
            taken[best] = True
        results.append((p, best >= 0))
    unmatched: dict[str, int] = {}
    for j, g in enumerate(gt):
        if not taken[j]:
            unmatched[g.label] = unmatched.get(g.label, 0) + 1
    return results, unmatched


def match_predictions(
    preds: Sequence[Detection],
    gt: Sequence[GroundTruth],
    cfg: MatchConfig = MatchConfig(),
) -> dict[str, Counts]:
    """Per-class TP/FP/FN for one frame at the configured confidence cutoff."""
    kept = [p for p in preds if p.confidence >= cfg.confidence_threshold]
    matched, unmatched = greedy_match(kept, gt, cfg.iou_threshold)
    counts: dict[str, Counts] = {}
    for p, hit in matched:
        c = counts.setdefault(p.label, Counts())
        if hit:
            c.tp += 1
        else:
            c.fp += 1
    for label, n in unmatched.items():
        counts.setdefault(label, Counts()).fn += n
    return counts


def average_precision(scored: Sequence[tuple[float, bool]], gt_count: int) -> float:
    """All-point interpolated AP from ``(confidence, is_tp)`` pairs.

    Pairs are ranked by descending confidence with a stable sort, so the
    input order settles ties.
    """
    if gt_count <= 0 or not scored:
        return 0.0
    order = sorted(range(len(scored)), key=lambda i: -scored[i][0])
    hits = np.array([scored[i][1] for i in order], dtype=float)
    ctp = np.cumsum(hits)
    recall = ctp / gt_count
    precision = ctp / np.arange(1, len(hits) + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.concatenate(([0.0], recall)))
    return float(np.sum(steps * envelope))


@dataclass(frozen=True)
class ClassMetrics:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    ap: float
    gt_count: int


@dataclass(frozen=True)
class MetricReport:
    per_class: Mapping[str, ClassMetrics]
    precision: float
    recall: float
    f1: float
    map: float

    @property
    def aggregate(self) -> dict[str, float]:
        return {"map": self.map, "f1": self.f1, "precision": self.precision, "recall": self.recall}

    def to_dict(self) -> dict:
        return {
            "aggregate": self.aggregate,
            "per_class": {k: asdict(v) for k, v in self.per_class.items()},
        }

    def render(self) -> str:
        head = f"{'class':<16}{'tp':>7}{'fp':>7}{'fn':>7}{'prec':>8}{'rec':>8}{'f1':>8}{'ap50':>8}"
        lines = [head, "-" * len(head)]
        for name, m in self.per_class.items():
            lines.append(
                f"{name:<16}{m.tp:>7}{m.fp:>7}{m.fn:>7}{m.precision:>8.4f}{m.recall:>8.4f}{m.f1:>8.4f}{m.ap:>8.4f}"
            )
        lines.append("-" * len(head))
        lines.append(
            f"{'all':<16}{'':>21}{self.precision:>8.4f}{self.recall:>8.4f}{self.f1:>8.4f}{self.map:>8.4f}"
        )
        return "\n".join(lines)


@dataclass
class FrameEval:
    """Per-frame matching results; combining frames is a plain reduction."""

    counts: dict[str, Counts] = field(default_factory=dict)
    scored: dict[str, list[tuple[float, bool]]] = field(default_factory=dict)
    gt_counts: dict[str, int] = field(default_factory=dict)


def evaluate_frame(preds: Sequence[Detection], gt: Sequence[GroundTruth], cfg: MatchConfig) -> FrameEval:
    out = FrameEval(counts=match_predictions(preds, gt, cfg))
    matched, _ = greedy_match(preds, gt, cfg.iou_threshold)
    for p, hit in matched:
        out.scored.setdefault(p.label, []).append((p.confidence, hit))
    for g in gt:
        out.gt_counts[g.label] = out.gt_counts.get(g.label, 0) + 1
    return out


def combine(frame_evals: Iterable[FrameEval]) -> MetricReport:
    """Fold per-frame results (in frame order) into a dataset report."""
    counts: dict[str, Counts] = {}
    scored: dict[str, list[tuple[float, bool]]] = {}
    gt_counts: dict[str, int] = {}
    for fe in frame_evals:
        for label, c in fe.counts.items():
            acc = counts.setdefault(label, Counts())
            acc += c
        for label, s in fe.scored.items():
            scored.setdefault(label, []).extend(s)
        for label, n in fe.gt_counts.items():
            gt_counts[label] = gt_counts.get(label, 0) + n
    per_class = {}
    total = Counts()
    aps = []
    for label in sorted(set(counts) | set(gt_counts) | set(scored)):
        c = counts.get(label, Counts())
        total += c
        p, r, f = prf1(*c.as_tuple())
        n_gt = gt_counts.get(label, 0)
        ap = average_precision(scored.get(label, []), n_gt)
        if n_gt > 0:
            aps.append(ap)
        per_class[label] = ClassMetrics(c.tp, c.fp, c.fn, p, r, f, ap, n_gt)
    p, r, f = prf1(*total.as_tuple())
    return MetricReport(per_class, p, r, f, float(np.mean(aps)) if aps else 0.0)


def evaluate(
    predictions: Mapping[str, Sequence[Detection]],
    manifest: DatasetManifest,
    cfg: MatchConfig = MatchConfig(),
) -> MetricReport:
    """Score predictions against every labeled frame of ``manifest``.

    Unlabeled frames (``ground_truth is None``) and predictions for frames
    outside the manifest are ignored.
    """
    return combine(
        evaluate_frame(predictions.get(f.frame_id, ()), f.ground_truth, cfg)
        for f in manifest.frames
        if f.ground_truth is not None
    )


# ---------------------------------------------------------------------------
# training curves and checkpoint selection


@dataclass(frozen=True)
class EpochSeries:
    epochs: tuple[int, ...]
    metrics: Mapping[str, tuple[float, ...]]

    def __post_init__(self) -> None:
        object.__setattr__(self, "epochs", tuple(int(e) for e in self.epochs))
        object.__setattr__(self, "metrics", {k: tuple(float(x) for x in v) for k, v in self.metrics.items()})
        if any(b <= a for a, b in zip(self.epochs, self.epochs[1:])):
            raise ValueError("epoch indices must be strictly increasing")
        for name, vals in self.metrics.items():
            if len(vals) != len(self.epochs):
                raise ValueError(f"metric {name!r} has {len(vals)} values for {len(self.epochs)} epochs")
            if not all(math.isfinite(v) for v in vals):
                raise ValueError(f"metric {name!r} has non-finite values")

    def __len__(self) -> int:
        return len(self.epochs)

    def values(self, metric: str) -> np.ndarray:
        if metric not in self.metrics:
            raise MissingMetric(metric)
        return np.asarray(self.metrics[metric], dtype=float)

    def at(self, epoch: int) -> dict[str, float]:
        i = self.epochs.index(epoch)
        return {k: v[i] for k, v in self.metrics.items()}

    def with_f1(self, precision: str = "precision", recall: str = "recall", name: str = "f1") -> EpochSeries:
        p, r = self.values(precision), self.values(recall)
        f1 = [f1_score(a, b) for a, b in zip(p, r)]
        return EpochSeries(self.epochs, {**self.metrics, name: tuple(f1)})


def load_epoch_series(
    path: str | os.PathLike,
    epoch_column: str = "epoch",
    aliases: Mapping[str, str] | None = None,
) -> EpochSeries:
    """Read a per-epoch CSV log (one row per epoch, one column per metric).

    Header cells are whitespace-stripped, which covers common training-log
    exports. ``aliases`` renames columns, e.g. ``{"metrics/mAP50(B)": "map"}``.
    Non-numeric columns are dropped.
    """
    path = str(path)
    aliases = dict(aliases or {})
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty epoch series", path) from None
        rows = [r for r in reader if any(c.strip() for c in r)]
    if epoch_column not in header:
        raise ParseError(f"missing column {epoch_column!r}", path)
    ei = header.index(epoch_column)
    epochs = []
    columns: dict[str, list[float]] = {aliases.get(h, h): [] for i, h in enumerate(header) if i != ei}
    numeric = dict.fromkeys(columns, True)
    for lineno, r in enumerate(rows, 2):
        if len(r) != len(header):
            raise ParseError(f"expected {len(header)} cells, got {len(r)}", path, lineno)
        try:
            epochs.append(int(float(r[ei])))
        except ValueError:
            raise ParseError(f"bad epoch value {r[ei]!r}", path, lineno) from None
        for i, h in enumerate(header):
            if i == ei:
                continue
            name = aliases.get(h, h)
            try:
                columns[name].append(float(r[i]))
            except ValueError:
                numeric[name] = False
    try:
        return EpochSeries(tuple(epochs), {k: tuple(v) for k, v in columns.items() if numeric[k]})
    except ValueError as exc:
        raise ParseError(str(exc), path) from exc


@dataclass(frozen=True)
class Strategy:
    """``best`` maximizes one metric; ``geometric_mean`` maximizes sqrt(a*b)."""

    kind: str
    metrics: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "metrics", tuple(self.metrics))
        if self.kind == "best" and len(self.metrics) != 1:
            raise ValueError("best() takes exactly one metric")
        if self.kind == "geometric_mean" and len(self.metrics) != 2:
            raise ValueError("geometric_mean() takes exactly two metrics")
        if self.kind not in ("best", "geometric_mean"):
            raise ValueError(f"unknown strategy {self.kind!r}")

    @classmethod
    def parse(cls, text: str) -> Strategy:
        """Parse ``best(map)`` or ``geometric_mean(map, f1)``."""
        text = text.strip()
        if not text.endswith(")") or "(" not in text:
            raise ValueError(f"cannot parse strategy {text!r}")
        kind, args = text[:-1].split("(", 1)
        return cls(kind.strip(), tuple(a.strip() for a in args.split(",") if a.strip()))

    def __str__(self) -> str:
        return f"{self.kind}({', '.join(self.metrics)})"

    def score(self, series: EpochSeries) -> np.ndarray:
        if self.kind == "best":
            return series.values(self.metrics[0])
        a, b = (series.values(m) for m in self.metrics)
        return np.sqrt(a * b)


def best(metric: str) -> Strategy:
    return Strategy("best", (metric,))


def geometric_mean(a: str, b: str) -> Strategy:
    return Strategy("geometric_mean", (a, b))


def select_checkpoint(series: EpochSeries, strategy: Strategy) -> int:
    """Epoch with the highest strategy score; the earliest epoch wins ties."""
    if len(series) == 0:
        raise ValueError("empty epoch series")
    scores = strategy.score(series)
    return series.epochs[int(np.argmax(scores))]


@dataclass(frozen=True)
class RollingStats:
    epochs: tuple[int, ...]
    mean: Mapping[str, tuple[float, ...]]
    std: Mapping[str, tuple[float, ...]]


def rolling_stats(series: EpochSeries, window: int) -> RollingStats:
    """Trailing-window mean and population std per metric (for display only)."""
    if window < 1:
        raise ValueError("window must be >= 1")
    means, stds = {}, {}
    for name in series.metrics:
        v = series.values(name)
        m, s = [], []
        for i in range(len(v)):
            w = v[max(0, i - window + 1) : i + 1]
            m.append(float(w.mean()))
            s.append(float(w.std()))
        means[name], stds[name] = tuple(m), tuple(s)
    return RollingStats(series.epochs, means, stds)


# ---------------------------------------------------------------------------
# comparisons


@dataclass(frozen=True)
class ChangeReport:
    """Percent change of candidate vs baseline per metric.

    ``undefined`` lists metrics skipped because the baseline was zero.
    """

    changes: Mapping[str, float]
    baseline: Mapping[str, float]
    candidate: Mapping[str, float]
    undefined: tuple[str, ...] = ()
    label: str = ""

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "changes_pct": {k: round(v, 2) for k, v in self.changes.items()},
            "baseline": dict(self.baseline),
            "candidate": dict(self.candidate),
            "undefined": list(self.undefined),
        }

    def render(self) -> str:
        cells = [f"{k}: {v:+.2f}%" for k, v in self.changes.items()]
        cells += [f"{k}: n/a (zero baseline)" for k in self.undefined]
        prefix = f"{self.label}: " if self.label else ""
        return prefix + ", ".join(cells)


def percent_change(baseline: float, candidate: float) -> float:
    return 100.0 * (candidate - baseline) / baseline


def change_report(
    baseline: MetricReport | Mapping[str, float],
    candidate: MetricReport | Mapping[str, float],
    metrics: Sequence[str] = REPORT_METRICS,
    skip_zero: bool = False,
    label: str = "",
) -> ChangeReport:
    """Percent change per metric.

    Raises:
        ZeroBaseline: some baseline metric is zero and ``skip_zero`` is off.
    """
    base = baseline.aggregate if isinstance(baseline, MetricReport) else dict(baseline)
    cand = candidate.aggregate if isinstance(candidate, MetricReport) else dict(candidate)
    for m in metrics:
        if m not in base:
            raise MissingMetric(m)
        if m not in cand:
            raise MissingMetric(m)
    zero = [m for m in metrics if base[m] == 0]
    if zero and not skip_zero:
        raise ZeroBaseline(zero)
    changes = {m: percent_change(base[m], cand[m]) for m in metrics if m not in zero}
    return ChangeReport(
        changes,
        {m: base[m] for m in metrics},
        {m: cand[m] for m in metrics},
        tuple(zero),
        label,
    )


def compare_checkpoints(
    baseline: EpochSeries,
    candidate: EpochSeries,
    strategy: Strategy,
    metrics: Sequence[str] = REPORT_METRICS,
    skip_zero: bool = False,
) -> tuple[int, int, ChangeReport]:
    """Pick a checkpoint in each run with ``strategy`` and compare the picked epochs."""
    eb = select_checkpoint(baseline, strategy)
    ec = select_checkpoint(candidate, strategy)
    report = change_report(baseline.at(eb), candidate.at(ec), metrics, skip_zero, label=str(strategy))
    return eb, ec, report
