"""Frame selection from per-frame consensus counts, crowd tagging and elimination bookkeeping."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Iterable, Mapping

from .core import Frame

CROWD_TAG = "crowd"


@dataclass(frozen=True)
class SelectionPolicy:
    min_instances: int = 1
    crowd_threshold: int = 40

    def __post_init__(self) -> None:
        if self.min_instances < 1:
            raise ValueError("min_instances must be >= 1")
        if self.crowd_threshold < 1:
            raise ValueError("crowd_threshold must be >= 1")


@dataclass(frozen=True)
class SelectionReport:
    total_frames: int
    frames_with_any: int
    frames_selected: int
    eliminated_any_pct: float
    eliminated_selected_pct: float
    crowd_frames: int = 0
    crowd_instances: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def summary(self) -> str:
        return "\n".join(
            [
                f"frames processed:            {self.total_frames}",
                f"frames with any instance:    {self.frames_with_any}",
                f"frames selected:             {self.frames_selected}",
                f"eliminated (no instances):   {self.eliminated_any_pct:.2f}%",
                f"eliminated (not selected):   {self.eliminated_selected_pct:.2f}%",
                f"crowd frames / instances:    {self.crowd_frames} / {self.crowd_instances}",
            ]
        )


def elimination_pct(kept: int, total: int) -> float:
    """Share of ``total`` that was discarded, in percent with two decimals."""
    if total == 0:
        return 0.0
    return round(100.0 * (total - kept) / total, 2)


def select_frames(counts: Mapping[str, int], policy: SelectionPolicy) -> tuple[list[str], SelectionReport]:
    """Select frames holding at least ``policy.min_instances`` consensus instances.

    Selected ids come back densest first, ties by frame id, so truncating the
    list to a labeling budget keeps the most instances.
    """
    total = len(counts)
    with_any = sum(1 for c in counts.values() if c >= 1)
    selected = sorted((fid for fid, c in counts.items() if c >= policy.min_instances), key=lambda f: (-counts[f], f))
    report = SelectionReport(
        total_frames=total,
        frames_with_any=with_any,
        frames_selected=len(selected),
        eliminated_any_pct=elimination_pct(with_any, total),
        eliminated_selected_pct=elimination_pct(len(selected), total),
    )
    return selected, report


def tag_crowds(
    frames: Iterable[Frame],
    counts: Mapping[str, int],
    policy: SelectionPolicy,
) -> tuple[list[Frame], int, int]:
    """Tag frames with more than ``crowd_threshold`` instances as ``"crowd"``.

    Only tags change; ground truth is left alone. Returns the updated frames
    plus the number of crowd frames and the instances they hold.
    """
    out = []
    crowd_frames = crowd_instances = 0
    for frame in frames:
        n = counts.get(frame.frame_id, 0)
        if n > policy.crowd_threshold:
            crowd_frames += 1
            crowd_instances += n
            if CROWD_TAG not in frame.tags:
                frame = replace(frame, tags=frame.tags | {CROWD_TAG})
        out.append(frame)
    return out, crowd_frames, crowd_instances


def with_crowd_stats(report: SelectionReport, crowd_frames: int, crowd_instances: int) -> SelectionReport:
    return replace(report, crowd_frames=crowd_frames, crowd_instances=crowd_instances)
