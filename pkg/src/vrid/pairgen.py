"""Cross-camera pair construction and the 5-set cross-validation rotation.

Matching pairs use every combination of a co-visible vehicle's frame
occurrences in the two cameras (m1 x m2 per vehicle); non-matching pairs
use only the first occurrence of each vehicle, one pair per ordered
(camera-1 vehicle, camera-2 vehicle) combination with distinct ids.
Pairs never cross set boundaries.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .ingest import VehicleAnnotation

SET_IDS = ("01", "02", "03", "04", "05")

MATCHING = "matching"
NON_MATCHING = "non-matching"


class PairError(ValueError):
    pass


@dataclass(frozen=True)
class VehicleTrack:
    """One vehicle's ordered frame occurrences within a single camera."""

    vehicle_id: str
    frames: tuple[int, ...]

    def __post_init__(self):
        if not self.frames:
            raise PairError(f"vehicle {self.vehicle_id!r} has no frame occurrences")


@dataclass(frozen=True)
class PairSample:
    """A labeled cross-camera pair, referenced by (vehicle, frame) keys.

    Side 1 is always camera 1, side 2 camera 2; patches are materialized
    lazily from these keys when a model consumes the pair.
    """

    vehicle_1: str
    frame_1: int
    vehicle_2: str
    frame_2: int
    label: str  # MATCHING or NON_MATCHING
    set_id: str = ""

    @property
    def is_matching(self) -> bool:
        return self.label == MATCHING


def tracks_from_annotations(annotations: list[VehicleAnnotation]) -> list[VehicleTrack]:
    return [VehicleTrack(a.vehicle_id, a.occurrence_frames) for a in annotations]


def build_pairs(cam1_vehicles: list[VehicleTrack], cam2_vehicles: list[VehicleTrack],
                set_id: str = "", negative_ratio: float | None = None,
                rng: np.random.Generator | None = None) -> list[PairSample]:
    """Build all labeled pairs between the two cameras' vehicles.

    ``negative_ratio`` optionally caps non-matching pairs at that multiple
    of the matching count (seeded subsample via ``rng``); default keeps all.
    """
    for name, tracks in (("camera 1", cam1_vehicles), ("camera 2", cam2_vehicles)):
        ids = [t.vehicle_id for t in tracks]
        if len(set(ids)) != len(ids):
            dupes = sorted({v for v in ids if ids.count(v) > 1})
            raise PairError(f"duplicate vehicle ids in {name} list: {dupes}")

    matching = []
    for t1 in cam1_vehicles:
        for t2 in cam2_vehicles:
            if t1.vehicle_id != t2.vehicle_id:
                continue
            for f1 in t1.frames:
                for f2 in t2.frames:
                    matching.append(PairSample(t1.vehicle_id, f1, t2.vehicle_id, f2, MATCHING, set_id))

    non_matching = [
        PairSample(t1.vehicle_id, t1.frames[0], t2.vehicle_id, t2.frames[0], NON_MATCHING, set_id)
        for t1 in cam1_vehicles for t2 in cam2_vehicles
        if t1.vehicle_id != t2.vehicle_id
    ]

    if negative_ratio is not None and matching:
        cap = int(negative_ratio * len(matching))
        if len(non_matching) > cap:
            if rng is None:
                rng = np.random.default_rng(0)
            keep = rng.choice(len(non_matching), size=cap, replace=False)
            non_matching = [non_matching[i] for i in sorted(keep)]

    return matching + non_matching


def pair_counts(cam1_vehicles: list[VehicleTrack], cam2_vehicles: list[VehicleTrack]) -> tuple[int, int]:
    """Closed-form (matching, non-matching) counts for full pair generation."""
    ids1 = {t.vehicle_id: len(t.frames) for t in cam1_vehicles}
    ids2 = {t.vehicle_id: len(t.frames) for t in cam2_vehicles}
    co_visible = set(ids1) & set(ids2)
    n_matching = sum(ids1[v] * ids2[v] for v in co_visible)
    n_non_matching = len(ids1) * len(ids2) - len(co_visible)
    return n_matching, n_non_matching


@dataclass(frozen=True)
class SplitRound:
    train: tuple[str, str]
    val: tuple[str]
    test: tuple[str, str]

    def all_sets(self) -> tuple[str, ...]:
        return self.train + self.val + self.test


@dataclass(frozen=True)
class SplitPlan:
    rounds: tuple[SplitRound, ...]


def make_split_plan() -> SplitPlan:
    """Five rounds: (01,02 | 03 | 04,05) rotated by +1 set per round."""
    rounds = []
    k = len(SET_IDS)
    for r in range(k):
        ids = [SET_IDS[(r + i) % k] for i in range(k)]
        rounds.append(SplitRound(train=(ids[0], ids[1]), val=(ids[2],), test=(ids[3], ids[4])))
    return SplitPlan(tuple(rounds))


# ---------------------------------------------------------------------------
# Pair manifests (CSV): set_id,label,veh1,frame1,veh2,frame2
# ---------------------------------------------------------------------------

MANIFEST_HEADER = ["set_id", "label", "veh1", "frame1", "veh2", "frame2"]


def pairs_to_csv(pairs: list[PairSample]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(MANIFEST_HEADER)
    for p in pairs:
        writer.writerow([p.set_id, p.label, p.vehicle_1, p.frame_1, p.vehicle_2, p.frame_2])
    return out.getvalue()


def pairs_from_csv(text: str) -> list[PairSample]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header != MANIFEST_HEADER:
        raise PairError(f"unexpected manifest header: {header}")
    pairs = []
    for row in reader:
        if not row:
            continue
        set_id, label, v1, f1, v2, f2 = row
        if label not in (MATCHING, NON_MATCHING):
            raise PairError(f"unknown pair label {label!r}")
        pairs.append(PairSample(v1, int(f1), v2, int(f2), label, set_id))
    return pairs
