import sys
from datetime import datetime, timedelta, timezone
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dataengine.core import BoundingBox, DatasetManifest, Frame, GroundTruth  # noqa: E402

T0 = datetime(2024, 5, 1, 12, 0, tzinfo=timezone.utc)


def make_frame(i: int, gt=None, width=100, height=100, tags=()) -> Frame:
    return Frame(
        frame_id=f"f{i:03d}",
        source_id="cam0",
        timestamp=T0 + timedelta(seconds=i),
        width=width,
        height=height,
        tags=frozenset(tags),
        ground_truth=None if gt is None else tuple(GroundTruth(lbl, BoundingBox(*box)) for lbl, box in gt),
    )


@pytest.fixture
def small_manifest() -> DatasetManifest:
    frames = (
        make_frame(0, [("person", (10, 10, 20, 30))]),
        make_frame(1, [("person", (5, 5, 15, 15)), ("car", (40, 40, 90, 70))]),
        make_frame(2, []),
    )
    return DatasetManifest("seed", frames, ("person", "car"), "unit test")
