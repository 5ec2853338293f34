"""Ground-truth parsing, patch extraction, and training-time augmentation.

Ground truth is one XML document per video; each <vehicle> entry carries
the plate string, the plate box of its first occurrence, and the list of
frame indices where the vehicle is visible. Frames are consumed as
pre-extracted image files (``frames/<video>/<frame_index>.png``).

Patches are float32 HxWxC arrays with values in [0, 1]: vehicle-shape
patches are 64x64x3, plate patches are 128x352x3 (352 wide, 128 high).
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, replace
from pathlib import Path

import cv2
import numpy as np

from .alphabet import UnknownSymbolError, validate_plate_string

SHAPE_SIZE = 64
PLATE_WIDTH = 352
PLATE_HEIGHT = 128

# Plate-box expansion used to reconstruct a vehicle-rear crop: width x4,
# height x8, shifted upward by 2 plate-heights.
DEFAULT_SHAPE_EXPAND = (4.0, 8.0, 2.0)


class GroundTruthError(ValueError):
    """Base class for ground-truth ingestion failures."""


class XmlParseError(GroundTruthError):
    """Malformed XML; message carries the line number."""


class AnnotationError(GroundTruthError):
    """Well-formed XML whose content violates the schema."""


class PatchError(ValueError):
    """Invalid crop request (degenerate or out-of-frame box)."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle in pixel coordinates."""

    x: int
    y: int
    w: int
    h: int

    @property
    def x2(self) -> int:
        return self.x + self.w

    @property
    def y2(self) -> int:
        return self.y + self.h


@dataclass(frozen=True)
class VehicleAnnotation:
    """One labeled vehicle in one camera's video."""

    vehicle_id: str
    camera_id: int
    frame_index: int
    plate_string: str
    legible: bool
    plate_box: Box
    make: str = ""
    model: str = ""
    color: str = ""
    year: str = ""
    occurrence_frames: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if not self.occurrence_frames:
            object.__setattr__(self, "occurrence_frames", (self.frame_index,))


@dataclass(frozen=True)
class ShapePatch:
    pixels: np.ndarray  # 64x64x3 float32 in [0,1]
    source: tuple[str, int, int]  # (vehicle_id, camera_id, frame_index)


@dataclass(frozen=True)
class PlatePatch:
    pixels: np.ndarray  # 128x352x3 float32 in [0,1]
    source: tuple[str, int, int]


def parse_ground_truth(xml_document: str) -> list[VehicleAnnotation]:
    """Parse one ground-truth XML document into annotations.

    Plate strings are uppercased; entries marked illegible (or with an
    empty string) carry ``plate_string=""`` and ``legible=False``.
    """
    try:
        root = ET.fromstring(xml_document)
    except ET.ParseError as exc:
        line, col = exc.position
        raise XmlParseError(f"malformed XML at line {line}, column {col}: {exc.msg}") from exc

    if root.tag != "dataset":
        raise AnnotationError(f"expected <dataset> root element, got <{root.tag}>")
    try:
        camera_id = int(root.get("camera", ""))
    except ValueError:
        raise AnnotationError("dataset element is missing a numeric 'camera' attribute") from None

    annotations = []
    seen_ids: set[str] = set()
    for vehicle in root.iter("vehicle"):
        vid = vehicle.get("id")
        if not vid:
            raise AnnotationError("vehicle element without an 'id' attribute")
        if vid in seen_ids:
            raise AnnotationError(f"vehicle {vid!r} appears more than once in the document")
        seen_ids.add(vid)

        plate = vehicle.find("plate")
        if plate is None:
            raise AnnotationError(f"vehicle {vid!r} has no <plate> element")
        raw_string = (plate.get("string") or "").upper()
        legible = plate.get("legible", "true").lower() != "false" and raw_string != ""
        plate_string = raw_string if legible else ""
        if plate_string:
            try:
                validate_plate_string(plate_string)
            except UnknownSymbolError as exc:
                raise AnnotationError(f"vehicle {vid!r}: {exc}") from exc

        try:
            frame_index = int(plate.get("frame", ""))
            box = Box(int(plate.get("x", "")), int(plate.get("y", "")),
                      int(plate.get("w", "")), int(plate.get("h", "")))
        except ValueError:
            raise AnnotationError(f"vehicle {vid!r}: plate frame/box attributes must be integers") from None
        if frame_index < 0 or box.w <= 0 or box.h <= 0 or box.x < 0 or box.y < 0:
            raise AnnotationError(f"vehicle {vid!r}: invalid plate frame/box {box}")

        occ = vehicle.find("occurrences")
        if occ is not None and occ.get("frames"):
            frames = tuple(int(t) for t in occ.get("frames").split(","))
            if len(set(frames)) != len(frames):
                raise AnnotationError(f"vehicle {vid!r}: duplicate occurrence frames")
            if frame_index not in frames:
                raise AnnotationError(f"vehicle {vid!r}: plate frame {frame_index} not in occurrence list")
        else:
            frames = (frame_index,)

        annotations.append(VehicleAnnotation(
            vehicle_id=vid,
            camera_id=camera_id,
            frame_index=frame_index,
            plate_string=plate_string,
            legible=legible,
            plate_box=box,
            make=vehicle.get("make", ""),
            model=vehicle.get("model", ""),
            color=vehicle.get("color", ""),
            year=vehicle.get("year", ""),
            occurrence_frames=frames,
        ))
    return annotations


def serialize_ground_truth(annotations: list[VehicleAnnotation], camera: int, video: str) -> str:
    """Inverse of :func:`parse_ground_truth` (modulo attribute defaults)."""
    root = ET.Element("dataset", camera=str(camera), video=video)
    for ann in annotations:
        veh = ET.SubElement(root, "vehicle", id=ann.vehicle_id, make=ann.make,
                            model=ann.model, color=ann.color, year=ann.year)
        ET.SubElement(veh, "plate", string=ann.plate_string,
                      legible="true" if ann.legible else "false",
                      frame=str(ann.frame_index),
                      x=str(ann.plate_box.x), y=str(ann.plate_box.y),
                      w=str(ann.plate_box.w), h=str(ann.plate_box.h))
        ET.SubElement(veh, "occurrences", frames=",".join(str(f) for f in ann.occurrence_frames))
    ET.indent(root)
    return ET.tostring(root, encoding="unicode") + "\n"


def annotation_counts(annotations: list[VehicleAnnotation]) -> tuple[int, int]:
    """(number of vehicles, number with a legible plate)."""
    return len(annotations), sum(1 for a in annotations if a.legible)


def to_unit_float(image: np.ndarray) -> np.ndarray:
    """Coerce an image to float32 in [0, 1]; uint8 inputs are divided by 255."""
    if image.dtype == np.uint8:
        return image.astype(np.float32) / 255.0
    return image.astype(np.float32, copy=False)


def _crop_resize(frame: np.ndarray, box: Box, out_w: int, out_h: int) -> np.ndarray:
    fh, fw = frame.shape[:2]
    if box.w <= 0 or box.h <= 0:
        raise PatchError(f"degenerate box {box}")
    if box.x < 0 or box.y < 0 or box.x2 > fw or box.y2 > fh:
        raise PatchError(f"box {box} lies outside the {fw}x{fh} frame")
    crop = to_unit_float(frame[box.y:box.y2, box.x:box.x2])
    return cv2.resize(crop, (out_w, out_h), interpolation=cv2.INTER_LINEAR)


def extract_plate_patch(frame: np.ndarray, box: Box,
                        source: tuple[str, int, int] = ("", 0, 0)) -> PlatePatch:
    """Crop the plate box and resize to 352x128 with bilinear interpolation."""
    return PlatePatch(_crop_resize(frame, box, PLATE_WIDTH, PLATE_HEIGHT), source)


def shape_crop_box(plate_box: Box, frame_w: int, frame_h: int,
                   expand: tuple[float, float, float] = DEFAULT_SHAPE_EXPAND) -> Box:
    """Vehicle-rear rectangle derived from the plate box, clipped to the frame.

    The rectangle is the plate box scaled by (wfactor, hfactor) about its
    center and shifted upward by vshift plate-heights.
    """
    wfactor, hfactor, vshift = expand
    if wfactor <= 0 or hfactor <= 0:
        raise PatchError(f"expansion factors must be positive, got {expand}")
    cx = plate_box.x + plate_box.w / 2.0
    cy = plate_box.y + plate_box.h / 2.0 - vshift * plate_box.h
    rw = wfactor * plate_box.w
    rh = hfactor * plate_box.h
    x0 = max(0, int(round(cx - rw / 2.0)))
    y0 = max(0, int(round(cy - rh / 2.0)))
    x1 = min(frame_w, int(round(cx + rw / 2.0)))
    y1 = min(frame_h, int(round(cy + rh / 2.0)))
    if x1 <= x0 or y1 <= y0:
        raise PatchError(f"shape rectangle for plate box {plate_box} clips to zero area")
    return Box(x0, y0, x1 - x0, y1 - y0)


def extract_shape_patch(frame: np.ndarray, annotation: VehicleAnnotation,
                        expand: tuple[float, float, float] = DEFAULT_SHAPE_EXPAND) -> ShapePatch:
    """Extract the 64x64 vehicle-rear patch around the annotated plate."""
    fh, fw = frame.shape[:2]
    box = shape_crop_box(annotation.plate_box, fw, fh, expand)
    pixels = _crop_resize(frame, box, SHAPE_SIZE, SHAPE_SIZE)
    return ShapePatch(pixels, (annotation.vehicle_id, annotation.camera_id, annotation.frame_index))


# ---------------------------------------------------------------------------
# Augmentation. Parameters are drawn separately from their application so
# tests can force identity transforms and histogram the draws.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ShapeAugmentParams:
    crop_x: float  # pixels removed from the left, [0, 8]
    crop_y: float  # pixels removed from the top, [0, 8]
    scale: float   # [0.8, 1.2]
    shear_deg: float  # [-8, 8]


@dataclass(frozen=True)
class PlateAugmentParams:
    scale: float       # [0.8, 1.2]
    tx_frac: float     # [-0.1, 0.1] of patch width
    ty_frac: float     # [-0.1, 0.1] of patch height
    rotation_deg: float  # [-5, 5]
    shear_deg: float   # [-16, 16]


def draw_shape_augment(rng: np.random.Generator) -> ShapeAugmentParams:
    return ShapeAugmentParams(
        crop_x=float(rng.uniform(0.0, 8.0)),
        crop_y=float(rng.uniform(0.0, 8.0)),
        scale=float(rng.uniform(0.8, 1.2)),
        shear_deg=float(rng.uniform(-8.0, 8.0)),
    )


def draw_plate_augment(rng: np.random.Generator) -> PlateAugmentParams:
    return PlateAugmentParams(
        scale=float(rng.uniform(0.8, 1.2)),
        tx_frac=float(rng.uniform(-0.1, 0.1)),
        ty_frac=float(rng.uniform(-0.1, 0.1)),
        rotation_deg=float(rng.uniform(-5.0, 5.0)),
        shear_deg=float(rng.uniform(-16.0, 16.0)),
    )


def _compose(*mats: np.ndarray) -> np.ndarray:
    out = np.eye(3, dtype=np.float64)
    for m in mats:
        out = out @ m
    return out


def _about_center(mat2x2: np.ndarray, cx: float, cy: float) -> np.ndarray:
    m = np.eye(3, dtype=np.float64)
    m[:2, :2] = mat2x2
    m[0, 2] = cx - mat2x2[0, 0] * cx - mat2x2[0, 1] * cy
    m[1, 2] = cy - mat2x2[1, 0] * cx - mat2x2[1, 1] * cy
    return m


def _warp(patch: np.ndarray, transform3x3: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    return cv2.warpAffine(patch, transform3x3[:2].astype(np.float64), (out_w, out_h),
                          flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_CONSTANT, borderValue=0.0)


def apply_shape_augment(patch: ShapePatch, params: ShapeAugmentParams) -> ShapePatch:
    w = h = SHAPE_SIZE
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    shear = np.tan(np.deg2rad(params.shear_deg))
    geom = _compose(
        _about_center(np.array([[1.0, shear], [0.0, 1.0]]), cx, cy),
        _about_center(np.array([[params.scale, 0.0], [0.0, params.scale]]), cx, cy),
    )
    # Map the cropped window [crop_x, w) x [crop_y, h) back onto the full patch.
    zoom = np.eye(3, dtype=np.float64)
    zoom[0, 0] = w / (w - params.crop_x)
    zoom[1, 1] = h / (h - params.crop_y)
    zoom[0, 2] = -params.crop_x * zoom[0, 0]
    zoom[1, 2] = -params.crop_y * zoom[1, 1]
    return ShapePatch(_warp(patch.pixels, _compose(zoom, geom), w, h), patch.source)


def plate_augment_matrix(params: PlateAugmentParams) -> np.ndarray:
    """3x3 source-to-output affine for a plate augmentation draw."""
    w, h = PLATE_WIDTH, PLATE_HEIGHT
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    theta = np.deg2rad(params.rotation_deg)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    shear = np.array([[1.0, np.tan(np.deg2rad(params.shear_deg))], [0.0, 1.0]])
    translate = np.eye(3, dtype=np.float64)
    translate[0, 2] = params.tx_frac * w
    translate[1, 2] = params.ty_frac * h
    return _compose(
        translate,
        _about_center(rot, cx, cy),
        _about_center(shear, cx, cy),
        _about_center(np.array([[params.scale, 0.0], [0.0, params.scale]]), cx, cy),
    )


def apply_plate_augment(patch: PlatePatch, params: PlateAugmentParams) -> PlatePatch:
    geom = plate_augment_matrix(params)
    return PlatePatch(_warp(patch.pixels, geom, PLATE_WIDTH, PLATE_HEIGHT), patch.source)


def augment_shape(patch: ShapePatch, rng: np.random.Generator) -> ShapePatch:
    return apply_shape_augment(patch, draw_shape_augment(rng))


def augment_plate(patch: PlatePatch, rng: np.random.Generator) -> PlatePatch:
    return apply_plate_augment(patch, draw_plate_augment(rng))


# ---------------------------------------------------------------------------
# Frame storage
# ---------------------------------------------------------------------------

class FrameStore:
    """Reads pre-extracted frames laid out as ``<root>/<video>/<frame>.png``."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def path(self, video: str, frame_index: int) -> Path:
        return self.root / video / f"{frame_index}.png"

    def load(self, video: str, frame_index: int) -> np.ndarray:
        p = self.path(video, frame_index)
        image = cv2.imread(str(p), cv2.IMREAD_COLOR)
        if image is None:
            raise FileNotFoundError(f"frame image not found or unreadable: {p}")
        return to_unit_float(image)


def zero_plate_patch(source: tuple[str, int, int] = ("", 0, 0)) -> PlatePatch:
    """Placeholder plate patch for vehicles with an illegible plate."""
    return PlatePatch(np.zeros((PLATE_HEIGHT, PLATE_WIDTH, 3), dtype=np.float32), source)


def with_camera(annotation: VehicleAnnotation, camera_id: int) -> VehicleAnnotation:
    return replace(annotation, camera_id=camera_id)
