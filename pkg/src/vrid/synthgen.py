"""Synthetic corpus: rendered plates on parametric car rears, plus ground truth.

Each vehicle is a deterministic function of the generator seed: a shape
parameter bundle (body geometry and colors), a unique LLLDDDD plate
string, and per-camera placement. Vehicles hold still across their
occurrence frames (traffic-light style), so the annotated plate box is
valid for every occurrence; frames differ by illumination and sensor
noise. Confusability knobs plant same-shape/different-plate clone pairs
and plate pairs at slot distance 1.

Output follows the ingestion layout exactly: one ground-truth XML per
(camera, set) video plus ``frames/<video>/<frame>.png`` images.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import cv2
import numpy as np

from .alphabet import ALPHABET
from .ingest import (Box, PLATE_HEIGHT, PLATE_WIDTH, VehicleAnnotation,
                     extract_plate_patch, serialize_ground_truth, to_unit_float)
from .ocr_stream import CharLabel, class_of_symbol
from .pairgen import SET_IDS

LETTER_CHOICES = ALPHABET[:26]
DIGIT_CHOICES = ALPHABET[26:]

FRAME_W, FRAME_H = 768, 432


@dataclass(frozen=True)
class SynthSpec:
    vehicles_per_camera: int = 40  # per set
    co_visible_fraction: float = 0.85
    frames_per_vehicle: tuple[int, int] = (5, 25)
    clone_pairs: int = 0       # same-shape / different-plate vehicle pairs
    hamming1_pairs: int = 0    # plate pairs at slot distance exactly 1
    illegible_fraction: float = 0.0
    noise_sigma: tuple[float, float] = (0.004, 0.02)
    illumination: tuple[float, float] = (0.75, 1.15)
    n_sets: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.vehicles_per_camera <= 0 or self.n_sets <= 0:
            raise ValueError("vehicle and set counts must be positive")
        if not 0.0 <= self.co_visible_fraction <= 1.0:
            raise ValueError("co_visible_fraction must lie in [0, 1]")
        if not 0.0 <= self.illegible_fraction <= 1.0:
            raise ValueError("illegible_fraction must lie in [0, 1]")
        if self.clone_pairs < 0 or self.hamming1_pairs < 0:
            raise ValueError("confusability knobs must be nonnegative")
        if self.frames_per_vehicle[0] < 1 or self.frames_per_vehicle[0] > self.frames_per_vehicle[1]:
            raise ValueError("frames_per_vehicle must be a nonempty (low, high) range")


@dataclass(frozen=True)
class ShapeParams:
    body_color: tuple[float, float, float]
    cabin_color: tuple[float, float, float]
    window_color: tuple[float, float, float]
    light_color: tuple[float, float, float]
    body_w_factor: float   # body half-width in plate widths
    body_h_factor: float   # body height above plate in plate heights
    light_style: int       # 0 round, 1 tall, 2 wide
    bumper_tone: float


@dataclass(frozen=True)
class CameraView:
    plate_box: Box
    background_tone: float


@dataclass
class SynthVehicle:
    vehicle_id: str
    set_id: str
    plate: str
    legible: bool
    shape: ShapeParams
    cameras: tuple[int, ...]
    views: dict[int, CameraView]
    frames: dict[int, tuple[int, ...]] = field(default_factory=dict)


def video_name(camera: int, set_id: str) -> str:
    return f"cam{camera}_set{set_id}"


def _draw_shape_params(rng: np.random.Generator) -> ShapeParams:
    def color(low=0.1, high=0.95):
        return tuple(float(v) for v in rng.uniform(low, high, size=3))

    return ShapeParams(
        body_color=color(),
        cabin_color=color(0.05, 0.85),
        window_color=color(0.05, 0.35),
        light_color=(float(rng.uniform(0.6, 1.0)), float(rng.uniform(0.0, 0.4)),
                     float(rng.uniform(0.0, 0.3))),
        body_w_factor=float(rng.uniform(1.6, 2.0)),
        body_h_factor=float(rng.uniform(5.2, 6.8)),
        light_style=int(rng.integers(0, 3)),
        bumper_tone=float(rng.uniform(0.2, 0.6)),
    )


def _random_plate(rng: np.random.Generator, taken: set[str]) -> str:
    while True:
        plate = ("".join(rng.choice(list(LETTER_CHOICES), size=3))
                 + "".join(rng.choice(list(DIGIT_CHOICES), size=4)))
        if plate not in taken:
            taken.add(plate)
            return plate


def _hamming(a: str, b: str) -> int:
    return sum(x != y for x, y in zip(a, b))


def _hamming1_partner(plate: str, rng: np.random.Generator, taken: set[str]) -> str:
    while True:
        slot = int(rng.integers(0, 7))
        pool = LETTER_CHOICES if slot < 3 else DIGIT_CHOICES
        repl = str(rng.choice(list(pool)))
        candidate = plate[:slot] + repl + plate[slot + 1:]
        if candidate != plate and candidate not in taken:
            taken.add(candidate)
            return candidate


def _clone_partner_plate(plate: str, rng: np.random.Generator, taken: set[str]) -> str:
    # Clones must be separable by text alone: keep their plates far apart.
    while True:
        candidate = _random_plate(rng, taken)
        if _hamming(candidate, plate) >= 3:
            return candidate
        taken.discard(candidate)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

_CHAR_CELL_W = 46
_CHAR_LEFT = (PLATE_WIDTH - 7 * _CHAR_CELL_W) // 2


def render_plate_panel(plate: str, legible: bool = True) -> tuple[np.ndarray, list[CharLabel]]:
    """High-resolution plate panel (352x128) and its character labels.

    Characters sit in fixed monospaced cells; labels are normalized to the
    panel, which is also the coordinate frame of extracted plate patches.
    """
    img = np.full((PLATE_HEIGHT, PLATE_WIDTH, 3), 235, dtype=np.uint8)
    cv2.rectangle(img, (2, 2), (PLATE_WIDTH - 3, PLATE_HEIGHT - 3), (40, 40, 40), 4)
    labels: list[CharLabel] = []
    if not legible:
        # unreadable plate: smear instead of text
        cv2.rectangle(img, (20, 30), (PLATE_WIDTH - 20, PLATE_HEIGHT - 30), (150, 148, 140), -1)
        return img, labels
    font = cv2.FONT_HERSHEY_DUPLEX
    scale, thickness = 2.6, 7
    for k, ch in enumerate(plate):
        (tw, th), _ = cv2.getTextSize(ch, font, scale, thickness)
        cx = _CHAR_LEFT + k * _CHAR_CELL_W + _CHAR_CELL_W // 2
        org = (cx - tw // 2, PLATE_HEIGHT // 2 + th // 2)
        cv2.putText(img, ch, org, font, scale, (15, 15, 15), thickness, cv2.LINE_AA)
        labels.append(CharLabel(class_of_symbol(ch),
                                cx / PLATE_WIDTH, 0.5,
                                (tw + 6) / PLATE_WIDTH, (th + 10) / PLATE_HEIGHT))
    return img, labels


def _render_base_frame(vehicle: SynthVehicle, camera: int) -> np.ndarray:
    """Static scene for one (vehicle, camera): background, car rear, plate."""
    view = vehicle.views[camera]
    box = view.plate_box
    tone = view.background_tone
    img = np.empty((FRAME_H, FRAME_W, 3), dtype=np.float32)
    ramp = np.linspace(tone * 0.85, tone * 1.1, FRAME_H, dtype=np.float32)[:, None]
    img[:] = ramp[..., None]

    s = vehicle.shape
    pcx, pcy = box.x + box.w / 2.0, box.y + box.h / 2.0
    half_w = s.body_w_factor * box.w
    top = pcy - s.body_h_factor * box.h
    bottom = pcy + 2.2 * box.h

    def rect(x0, y0, x1, y1, color):
        cv2.rectangle(img, (int(x0), int(y0)), (int(x1), int(y1)),
                      tuple(float(c) for c in color), -1)

    # cabin, rear window, body, bumper
    cabin_top = top - 1.8 * box.h
    rect(pcx - 0.72 * half_w, cabin_top, pcx + 0.72 * half_w, top + 4, s.cabin_color)
    rect(pcx - 0.60 * half_w, cabin_top + 0.35 * box.h, pcx + 0.60 * half_w, top - 0.3 * box.h,
         s.window_color)
    rect(pcx - half_w, top, pcx + half_w, bottom, s.body_color)
    bump = (s.bumper_tone,) * 3
    rect(pcx - half_w, pcy - 1.1 * box.h, pcx + half_w, pcy + 1.5 * box.h, bump)

    # taillights
    ly = top + 0.9 * box.h
    lw, lh = (0.28, 0.5) if s.light_style == 0 else (0.2, 0.9) if s.light_style == 1 else (0.45, 0.35)
    for sign in (-1, 1):
        lx = pcx + sign * (half_w - 0.35 * half_w * lw) - 0.35 * half_w * lw
        if s.light_style == 0:
            cv2.circle(img, (int(pcx + sign * 0.8 * half_w), int(ly + 0.5 * box.h)),
                       int(0.45 * box.h), tuple(float(c) for c in s.light_color), -1)
        else:
            rect(lx, ly, lx + 0.7 * half_w * lw, ly + lh * 2.2 * box.h, s.light_color)

    panel, _ = render_plate_panel(vehicle.plate, vehicle.legible)
    small = cv2.resize(to_unit_float(panel), (box.w, box.h), interpolation=cv2.INTER_AREA)
    img[box.y:box.y + box.h, box.x:box.x + box.w] = small
    return img


class SynthCorpus:
    """Generated vehicles plus deterministic on-demand frame rendering."""

    def __init__(self, spec: SynthSpec, vehicles: list[SynthVehicle],
                 clone_pairs: list[tuple[str, str]], hamming1_pairs: list[tuple[str, str]]):
        self.spec = spec
        self.vehicles = vehicles
        self.clone_pairs = clone_pairs
        self.hamming1_pairs = hamming1_pairs
        self.by_id = {v.vehicle_id: v for v in vehicles}
        self._frame_owner: dict[tuple[int, str, int], str] = {}
        for v in vehicles:
            for cam in v.cameras:
                for f in v.frames[cam]:
                    self._frame_owner[(cam, v.set_id, f)] = v.vehicle_id
        self._base = lru_cache(maxsize=16)(self._base_uncached)

    def set_ids(self) -> tuple[str, ...]:
        return tuple(SET_IDS[:self.spec.n_sets])

    def _base_uncached(self, vehicle_id: str, camera: int) -> np.ndarray:
        return _render_base_frame(self.by_id[vehicle_id], camera)

    def frame(self, camera: int, set_id: str, frame_index: int) -> np.ndarray:
        """Render one frame (uint8), identical to what `write` puts on disk."""
        key = (camera, set_id, frame_index)
        if key not in self._frame_owner:
            raise KeyError(f"no frame {frame_index} in {video_name(camera, set_id)}")
        base = self._base(self._frame_owner[key], camera)
        rng = np.random.default_rng((self.spec.seed, camera, int(set_id), frame_index))
        illum = rng.uniform(*self.spec.illumination)
        sigma = rng.uniform(*self.spec.noise_sigma)
        noisy = base * illum + rng.normal(0.0, sigma, size=base.shape)
        return (np.clip(noisy, 0.0, 1.0) * 255.0).round().astype(np.uint8)

    def annotations(self, camera: int, set_id: str) -> list[VehicleAnnotation]:
        anns = []
        for v in self.vehicles:
            if v.set_id != set_id or camera not in v.cameras:
                continue
            anns.append(VehicleAnnotation(
                vehicle_id=v.vehicle_id, camera_id=camera,
                frame_index=v.frames[camera][0],
                plate_string=v.plate if v.legible else "",
                legible=v.legible,
                plate_box=v.views[camera].plate_box,
                make=f"make{int(v.shape.body_w_factor * 100) % 7}",
                model=f"model{v.shape.light_style}",
                color=f"#{int(v.shape.body_color[0] * 255):02x}"
                      f"{int(v.shape.body_color[1] * 255):02x}"
                      f"{int(v.shape.body_color[2] * 255):02x}",
                year=str(2005 + int(v.plate[3:]) % 18) if v.plate else "2010",
                occurrence_frames=v.frames[camera],
            ))
        return anns

    def xml(self, camera: int, set_id: str) -> str:
        return serialize_ground_truth(self.annotations(camera, set_id),
                                      camera, video_name(camera, set_id))

    def plate_panel_labels(self, vehicle_id: str) -> list[CharLabel]:
        v = self.by_id[vehicle_id]
        _, labels = render_plate_panel(v.plate, v.legible)
        return labels

    def ocr_samples(self, set_ids: tuple[str, ...] | None = None,
                    frames_per_vehicle: int = 1) -> list[tuple[np.ndarray, list[CharLabel]]]:
        """(extracted plate patch, char labels) pairs for detector training.

        Labels come from the panel geometry, which extraction maps one-to-one
        onto the 352x128 patch.
        """
        wanted = set(set_ids) if set_ids is not None else set(self.set_ids())
        samples = []
        for v in self.vehicles:
            if v.set_id not in wanted or not v.legible:
                continue
            labels = self.plate_panel_labels(v.vehicle_id)
            for cam in v.cameras:
                for f in v.frames[cam][:frames_per_vehicle]:
                    frame = to_unit_float(self.frame(cam, v.set_id, f))
                    patch = extract_plate_patch(frame, v.views[cam].plate_box)
                    samples.append((patch.pixels, labels))
        return samples

    def write(self, outdir: str | Path) -> None:
        """Emit frames/<video>/<frame>.png and one XML per (camera, set)."""
        outdir = Path(outdir)
        for set_id in self.set_ids():
            for camera in (1, 2):
                video = video_name(camera, set_id)
                (outdir / "frames" / video).mkdir(parents=True, exist_ok=True)
                (outdir / f"{video}.xml").write_text(self.xml(camera, set_id))
                for v in self.vehicles:
                    if v.set_id != set_id or camera not in v.cameras:
                        continue
                    for f in v.frames[camera]:
                        path = outdir / "frames" / video / f"{f}.png"
                        cv2.imwrite(str(path), self.frame(camera, set_id, f))

    def write_ocr_training_set(self, outdir: str | Path,
                               set_ids: tuple[str, ...] | None = None) -> int:
        """Plate patches plus per-image character label files for detector
        training; returns the number of samples written."""
        from .ocr_stream import labels_to_text
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        wanted = set(set_ids) if set_ids is not None else set(self.set_ids())
        count = 0
        for v in self.vehicles:
            if v.set_id not in wanted or not v.legible:
                continue
            labels = self.plate_panel_labels(v.vehicle_id)
            for cam in v.cameras:
                f = v.frames[cam][0]
                frame = to_unit_float(self.frame(cam, v.set_id, f))
                patch = extract_plate_patch(frame, v.views[cam].plate_box)
                name = f"{v.vehicle_id}_c{cam}_f{f}"
                cv2.imwrite(str(outdir / f"{name}.png"),
                            (patch.pixels * 255.0).round().astype(np.uint8))
                (outdir / f"{name}.txt").write_text(labels_to_text(labels))
                count += 1
        return count


def generate(spec: SynthSpec) -> SynthCorpus:
    """Deterministically build the synthetic corpus for ``spec``."""
    rng = np.random.default_rng(spec.seed)
    taken_plates: set[str] = set()
    set_ids = SET_IDS[:spec.n_sets]

    n = spec.vehicles_per_camera
    n_cov = int(round(spec.co_visible_fraction * n))
    clones_per_set = _spread(spec.clone_pairs, spec.n_sets)
    hamming_per_set = _spread(spec.hamming1_pairs, spec.n_sets)

    vehicles: list[SynthVehicle] = []
    clone_pairs: list[tuple[str, str]] = []
    hamming1_pairs: list[tuple[str, str]] = []

    for si, set_id in enumerate(set_ids):
        if 2 * clones_per_set[si] + 2 * hamming_per_set[si] > n_cov:
            raise ValueError("not enough co-visible vehicles for the requested confusable pairs")
        specs: list[dict] = []
        for i in range(n_cov):
            specs.append({"id": f"S{set_id}V{i:03d}", "cameras": (1, 2)})
        for i in range(n - n_cov):
            specs.append({"id": f"S{set_id}C1X{i:03d}", "cameras": (1,)})
        for i in range(n - n_cov):
            specs.append({"id": f"S{set_id}C2X{i:03d}", "cameras": (2,)})

        n_illegible = int(round(spec.illegible_fraction * len(specs)))
        # Confusable pairs occupy the front of the co-visible block; mark
        # illegible vehicles from the back so the knobs never collide.
        for entry in specs[len(specs) - n_illegible:]:
            entry["illegible"] = True

        vehicles_here: list[SynthVehicle] = []
        cursor = 0
        for entry in specs:
            shape = _draw_shape_params(rng)
            plate = _random_plate(rng, taken_plates)
            clone_of = None
            if cursor < 2 * clones_per_set[si] and len(entry["cameras"]) == 2:
                if cursor % 2 == 1:
                    partner = vehicles_here[cursor - 1]
                    shape = partner.shape
                    taken_plates.discard(plate)
                    plate = _clone_partner_plate(partner.plate, rng, taken_plates)
                    clone_of = partner.vehicle_id
            elif (cursor >= 2 * clones_per_set[si]
                  and cursor < 2 * (clones_per_set[si] + hamming_per_set[si])
                  and len(entry["cameras"]) == 2):
                if (cursor - 2 * clones_per_set[si]) % 2 == 1:
                    partner = vehicles_here[cursor - 1]
                    taken_plates.discard(plate)
                    plate = _hamming1_partner(partner.plate, rng, taken_plates)
                    hamming1_pairs.append((partner.vehicle_id, entry["id"]))

            views = {}
            for cam in entry["cameras"]:
                pw = int(rng.integers(108, 132))
                ph = int(round(pw * 0.34))
                px = int(rng.integers(250, 520 - pw))
                py = int(rng.integers(250, 345 - ph))
                views[cam] = CameraView(Box(px, py, pw, ph),
                                        background_tone=0.45 if cam == 1 else 0.55)
            vehicle = SynthVehicle(
                vehicle_id=entry["id"], set_id=set_id, plate=plate,
                legible=not entry.get("illegible", False),
                shape=shape, cameras=entry["cameras"], views=views,
                frames={},  # filled below once frame counts are known
            )
            if clone_of is not None:
                clone_pairs.append((clone_of, vehicle.vehicle_id))
            vehicles_here.append(vehicle)
            cursor += 1

        # assign contiguous frame ranges per camera video
        for cam in (1, 2):
            counter = 0
            for v in vehicles_here:
                if cam not in v.cameras:
                    continue
                m = int(rng.integers(spec.frames_per_vehicle[0], spec.frames_per_vehicle[1] + 1))
                v.frames[cam] = tuple(range(counter, counter + m))
                counter += m
        vehicles.extend(vehicles_here)

    return SynthCorpus(spec, vehicles, clone_pairs, hamming1_pairs)


def _spread(total: int, bins: int) -> list[int]:
    base, extra = divmod(total, bins)
    return [base + (1 if i < extra else 0) for i in range(bins)]
