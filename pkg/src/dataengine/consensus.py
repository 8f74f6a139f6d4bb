"""Cross-model clustering of detections and m-of-n majority voting."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import ClassQuery, Detection
from .errors import UnmappedLabel

DEFAULT_GROUP = "interest"


@dataclass(frozen=True)
class EnsembleConfig:
    """Ensemble membership and voting rule.

    ``label_groups`` maps raw labels to a canonical group; detections only
    vote together when their groups agree. When empty, every class in
    ``query.filter_subset`` falls into one shared group.
    """

    model_ids: tuple[str, ...]
    quorum: int
    query: ClassQuery
    iou_threshold: float = 0.5
    label_groups: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "model_ids", tuple(self.model_ids))
        if not self.model_ids:
            raise ValueError("ensemble needs at least one model")
        if len(set(self.model_ids)) != len(self.model_ids):
            raise ValueError("model_ids must be unique")
        if not 1 <= self.quorum <= len(self.model_ids):
            raise ValueError(f"quorum {self.quorum} outside 1..{len(self.model_ids)}")
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValueError("iou_threshold must be in (0, 1]")
        if not self.label_groups:
            groups = {c: DEFAULT_GROUP for c in self.query.filter_subset}
            object.__setattr__(self, "label_groups", groups)
        else:
            object.__setattr__(self, "label_groups", dict(self.label_groups))
        for c in self.query.filter_subset:
            if c not in self.label_groups:
                raise UnmappedLabel(c)

    @property
    def n_models(self) -> int:
        return len(self.model_ids)

    def model_index(self, model_id: str) -> int:
        try:
            return self.model_ids.index(model_id)
        except ValueError:
            raise ValueError(f"detection from model {model_id!r} which is not in the ensemble") from None

    def group_of(self, label: str) -> str:
        try:
            return self.label_groups[label]
        except KeyError:
            raise UnmappedLabel(label) from None


@dataclass(frozen=True, slots=True)
class GroupedDetection:
    detection: Detection
    group: str


@dataclass(frozen=True)
class ConsensusCluster:
    """One anchor detection and the boxes other models placed on it.

    ``supporters`` maps model id to ``(detection, iou_with_anchor)`` and
    includes the anchor itself.
    """

    anchor: Detection
    supporters: Mapping[str, tuple[Detection, float]]
    group: str
    passed: bool

    @property
    def support(self) -> int:
        return len(self.supporters)

    @property
    def members(self) -> list[Detection]:
        return [d for d, _ in self.supporters.values()]


def filter_to_query(
    dets: Iterable[Detection],
    query: ClassQuery,
    groups: Mapping[str, str],
) -> list[GroupedDetection]:
    """Keep detections whose label is in the filter subset, tagged with their group."""
    wanted = set(query.filter_subset)
    out = []
    for d in dets:
        if d.label not in wanted:
            continue
        if d.label not in groups:
            raise UnmappedLabel(d.label)
        out.append(GroupedDetection(d, groups[d.label]))
    return out


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between ``(N, 4)`` and ``(M, 4)`` corner-form box arrays.

    Uses the same operation order as :func:`dataengine.core.iou` so both give
    bit-identical results.
    """
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = iw * ih
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    overlap = (iw > 0.0) & (ih > 0.0)
    return np.where(overlap, inter / np.where(overlap, union, 1.0), 0.0)


def _unwrap(items: Sequence[Detection | GroupedDetection], config: EnsembleConfig):
    dets, groups = [], []
    for item in items:
        if isinstance(item, GroupedDetection):
            dets.append(item.detection)
            groups.append(item.group)
        else:
            dets.append(item)
            groups.append(config.group_of(item.label))
    return dets, groups


def anchor_order(dets: Sequence[Detection], model_idx: Sequence[int]) -> np.ndarray:
    """Indices sorted by (confidence desc, model index asc, input position asc)."""
    n = len(dets)
    conf = np.fromiter((d.confidence for d in dets), dtype=float, count=n)
    return np.lexsort((np.arange(n), np.asarray(model_idx), -conf))


def cluster_frame(
    dets: Sequence[Detection | GroupedDetection],
    config: EnsembleConfig,
) -> list[ConsensusCluster]:
    """Greedily cluster one frame's detections across ensemble members.

    The highest-ranked unassigned detection becomes an anchor. Every other
    model then contributes its unassigned same-group detection with the
    highest IoU against the anchor, provided that IoU reaches the threshold
    (IoU ties go to the higher-ranked detection). A cluster passes when its
    number of supporting models, the anchor's included, reaches the quorum.
    Each input detection lands in exactly one cluster.
    """
    if not dets:
        return []
    dets, groups = _unwrap(dets, config)
    n = len(dets)
    midx = np.array([config.model_index(d.model_id) for d in dets])
    group_codes = {g: i for i, g in enumerate(dict.fromkeys(groups))}
    gid = np.array([group_codes[g] for g in groups])
    order = anchor_order(dets, midx)
    rank = np.empty(n, dtype=int)
    rank[order] = np.arange(n)

    boxes = np.array([(d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max) for d in dets], dtype=float)
    ious = iou_matrix(boxes, boxes)
    eligible = (ious >= config.iou_threshold) & (gid[:, None] == gid[None, :]) & (midx[:, None] != midx[None, :])

    assigned = np.zeros(n, dtype=bool)
    clusters: list[ConsensusCluster] = []
    for a in order:
        if assigned[a]:
            continue
        assigned[a] = True
        anchor = dets[a]
        members = {anchor.model_id: (anchor, float(ious[a, a]))}
        cand = np.flatnonzero(eligible[a] & ~assigned)
        if cand.size:
            cand = cand[np.lexsort((rank[cand], -ious[a, cand], midx[cand]))]
            last_model = -1
            for j in cand:
                if midx[j] == last_model:
                    continue
                last_model = midx[j]
                assigned[j] = True
                members[dets[j].model_id] = (dets[j], float(ious[a, j]))
        clusters.append(ConsensusCluster(anchor, members, groups[a], len(members) >= config.quorum))
    return clusters


def consensus_detections(clusters: Iterable[ConsensusCluster]) -> list[Detection]:
    """Anchors of passed clusters, highest confidence first."""
    anchors = [c.anchor for c in clusters if c.passed]
    return sorted(anchors, key=lambda d: -d.confidence)


@dataclass
class FrameConsensus:
    frame_id: str
    clusters: list[ConsensusCluster]

    @property
    def detections(self) -> list[Detection]:
        return consensus_detections(self.clusters)

    @property
    def count(self) -> int:
        return sum(1 for c in self.clusters if c.passed)


def run_frame(frame_id: str, dets: Sequence[Detection], config: EnsembleConfig) -> FrameConsensus:
    """Query filter plus clustering for one frame."""
    grouped = filter_to_query(dets, config.query, config.label_groups)
    return FrameConsensus(frame_id, cluster_frame(grouped, config))
