"""CNN-OCR character detection and the plate text descriptor.

The detector is a single-scale convolutional network over 352x128 plate
patches producing a 44x16 grid with 5 anchors per cell; each anchor
predicts a box, an objectness score, and 35 character classes (letter O
is recognized jointly with digit 0, so 'O' never appears in readings).

Decoded detections become a 7-slot reading via layout-aware swaps for
the three-letters-four-digits plate syntax, and two readings combine
into the 35-value text descriptor: per plate, each character's alphabet
mapping interleaved with its confidence, plus a 7-slot equality block
between the plates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .alphabet import ALPHABET, DIGITS, LETTERS, char_distance, map_char
from .ingest import PLATE_HEIGHT, PLATE_WIDTH, PlatePatch

PLATE_SLOTS = 7
PLATE_LAYOUT = "LLLDDDD"
PADDING_SYMBOL = "A"

# 'O' is folded into '0': 35 detector classes over a 36-symbol alphabet.
DETECTOR_CLASSES: str = "".join(c for c in ALPHABET if c != "O")
N_CLASSES = len(DETECTOR_CLASSES)
_CLASS_INDEX = {c: i for i, c in enumerate(DETECTOR_CLASSES)}

GRID_W, GRID_H = 44, 16
STRIDE = 8  # 352/44 = 128/16 = 8 px per cell

# Anchor (w, h) in pixels: tall-thin boxes matching glyph proportions.
DEFAULT_ANCHORS = ((14.0, 36.0), (20.0, 52.0), (26.0, 68.0), (34.0, 84.0), (44.0, 104.0))
N_ANCHORS = len(DEFAULT_ANCHORS)
ANCHOR_ATTRS = 5 + N_CLASSES  # tx, ty, tw, th, objectness + class logits
MAP_CHANNELS = N_ANCHORS * ANCHOR_ATTRS  # 200

DEFAULT_CONF_THRESHOLD = 0.25
DEFAULT_NMS_IOU = 0.45

# letter-slot fixes for digits and digit-slot fixes for letters; glyph
# pairs that the detector commonly confuses
DIGIT_TO_LETTER = {"1": "I", "2": "Z", "4": "A", "5": "S", "6": "G", "7": "Z", "8": "B"}
LETTER_TO_DIGIT = {"A": "4", "B": "8", "D": "0", "G": "6", "I": "1", "J": "1",
                   "Q": "0", "S": "5", "Z": "7"}


def class_of_symbol(symbol: str) -> int:
    """Detector class index of a symbol; 'O' shares the class of '0'."""
    return _CLASS_INDEX["0" if symbol == "O" else symbol]


@dataclass(frozen=True)
class FloatBox:
    x: float
    y: float
    w: float
    h: float

    @property
    def center_x(self) -> float:
        return self.x + self.w / 2.0


@dataclass(frozen=True)
class CharDetection:
    symbol: str
    confidence: float
    box: FloatBox


@dataclass(frozen=True)
class PlateReading:
    """Seven (symbol, confidence) slots for the LLLDDDD plate layout.

    ``flags[k]`` is '' for a clean slot, 'padded' for a missing detection
    filled with ('A', 0.0), or 'violation' for a layout-violating symbol
    that had no swap rule.
    """

    slots: tuple[tuple[str, float], ...]
    flags: tuple[str, ...] = ("",) * PLATE_SLOTS
    layout: str = PLATE_LAYOUT

    def __post_init__(self):
        if len(self.slots) != PLATE_SLOTS or len(self.flags) != PLATE_SLOTS:
            raise ValueError(f"a plate reading has exactly {PLATE_SLOTS} slots")

    @property
    def text(self) -> str:
        """Detected characters only; padded slots are omitted."""
        return "".join(sym for (sym, _), flag in zip(self.slots, self.flags) if flag != "padded")

    @property
    def symbols(self) -> str:
        return "".join(sym for sym, _ in self.slots)

    @property
    def confidences(self) -> tuple[float, ...]:
        return tuple(conf for _, conf in self.slots)


def reading_from_string(plate: str, confidences: tuple[float, ...] | None = None) -> PlateReading:
    """Build a reading from a plain string, padding missing trailing slots."""
    if len(plate) > PLATE_SLOTS:
        raise ValueError(f"plate string {plate!r} longer than {PLATE_SLOTS} slots")
    if confidences is None:
        confidences = (1.0,) * len(plate)
    if len(confidences) != len(plate):
        raise ValueError("one confidence per character required")
    slots = [(c, float(conf)) for c, conf in zip(plate, confidences)]
    flags = [""] * len(plate)
    while len(slots) < PLATE_SLOTS:
        slots.append((PADDING_SYMBOL, 0.0))
        flags.append("padded")
    return PlateReading(tuple(slots), tuple(flags))


def empty_reading() -> PlateReading:
    return reading_from_string("")


# ---------------------------------------------------------------------------
# Network (the fifteen rows of the detection architecture)
# ---------------------------------------------------------------------------

_OCR_LAYOUT = (  # (kind, filters, kernel)
    ("conv", 32, 3), ("max", None, 2),
    ("conv", 64, 3), ("max", None, 2),
    ("conv", 128, 3), ("conv", 64, 1), ("conv", 128, 3), ("max", None, 2),
    ("conv", 256, 3), ("conv", 128, 1), ("conv", 256, 3),
    ("conv", 512, 3), ("conv", 256, 1), ("conv", 512, 3),
    ("conv", MAP_CHANNELS, 1),
)


class CnnOcr(nn.Module):
    """Character detector over plate patches, ending in a 44x16x200 map."""

    def __init__(self):
        super().__init__()
        layers: list[nn.Module] = []
        in_ch = 3
        n_convs = sum(1 for kind, _, _ in _OCR_LAYOUT if kind == "conv")
        seen = 0
        for kind, filters, kernel in _OCR_LAYOUT:
            if kind == "conv":
                seen += 1
                layers.append(nn.Conv2d(in_ch, filters, kernel_size=kernel,
                                        stride=1, padding=kernel // 2))
                if seen < n_convs:  # raw logits out of the 200-channel head
                    layers.append(nn.LeakyReLU(0.1, inplace=True))
                in_ch = filters
            else:
                layers.append(nn.MaxPool2d(kernel_size=2, stride=2))
        self.features = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1:] != (3, PLATE_HEIGHT, PLATE_WIDTH):
            raise ValueError(f"expected Nx3x{PLATE_HEIGHT}x{PLATE_WIDTH} input, got {tuple(x.shape)}")
        return self.features(x)


def build_cnn_ocr(seed: int | None = None) -> CnnOcr:
    net = CnnOcr()
    if seed is not None:
        from .shape_stream import reinit_uniform_fanin_
        reinit_uniform_fanin_(net, seed)
    return net


def detection_map(net_output: torch.Tensor) -> np.ndarray:
    """One image's CHW network output -> float64 HxWxC decode grid."""
    if net_output.dim() == 4:
        if net_output.shape[0] != 1:
            raise ValueError("detection_map expects a single image")
        net_output = net_output[0]
    return net_output.detach().permute(1, 2, 0).numpy().astype(np.float64)


# ---------------------------------------------------------------------------
# Decoding
# ---------------------------------------------------------------------------

def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def iou(a: FloatBox, b: FloatBox) -> float:
    ix = max(0.0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    iy = max(0.0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = ix * iy
    union = a.w * a.h + b.w * b.h - inter
    return inter / union if union > 0 else 0.0


def decode_detections(grid: np.ndarray,
                      conf_threshold: float = DEFAULT_CONF_THRESHOLD,
                      nms_iou: float = DEFAULT_NMS_IOU,
                      anchors: tuple[tuple[float, float], ...] = DEFAULT_ANCHORS,
                      stride: float = STRIDE) -> list[CharDetection]:
    """Decode an HxWx(A*40) logit grid into character detections.

    Box centers are cell-relative sigmoid offsets, sizes are anchor-scaled
    exponentials, confidence is objectness times the best class probability.
    Greedy NMS suppresses overlaps above ``nms_iou`` (ties broken by decode
    order); survivors are returned left to right by box center.
    """
    if not (0.0 <= conf_threshold <= 1.0 and 0.0 <= nms_iou <= 1.0):
        raise ValueError("thresholds must lie in [0, 1]")
    h, w, channels = grid.shape
    n_anchors = len(anchors)
    if channels != n_anchors * ANCHOR_ATTRS:
        raise ValueError(f"grid has {channels} channels, expected {n_anchors * ANCHOR_ATTRS}")

    v = grid.astype(np.float64).reshape(h, w, n_anchors, ANCHOR_ATTRS)
    cols = np.arange(w, dtype=np.float64)[None, :, None]
    rows = np.arange(h, dtype=np.float64)[:, None, None]
    anchor_wh = np.asarray(anchors, dtype=np.float64)

    bx = (cols + _sigmoid(v[..., 0])) * stride
    by = (rows + _sigmoid(v[..., 1])) * stride
    bw = anchor_wh[:, 0] * np.exp(v[..., 2])
    bh = anchor_wh[:, 1] * np.exp(v[..., 3])

    class_logits = v[..., 5:]
    z_max = class_logits.max(axis=-1)
    best_prob = 1.0 / np.exp(class_logits - z_max[..., None]).sum(axis=-1)
    conf = _sigmoid(v[..., 4]) * best_prob
    best_class = class_logits.argmax(axis=-1)

    candidates = []
    for r, c, a in zip(*np.nonzero(conf >= conf_threshold)):
        box = FloatBox(bx[r, c, a] - bw[r, c, a] / 2.0, by[r, c, a] - bh[r, c, a] / 2.0,
                       bw[r, c, a], bh[r, c, a])
        candidates.append(CharDetection(DETECTOR_CLASSES[best_class[r, c, a]],
                                        float(conf[r, c, a]), box))

    # np.nonzero already yields row-major (r, c, a) order; a stable sort on
    # descending confidence therefore breaks ties by decode order.
    order = sorted(range(len(candidates)), key=lambda i: -candidates[i].confidence)
    kept: list[CharDetection] = []
    for i in order:
        if all(iou(candidates[i].box, k.box) <= nms_iou for k in kept):
            kept.append(candidates[i])
    kept.sort(key=lambda d: d.box.center_x)
    return kept


# ---------------------------------------------------------------------------
# Layout swaps and the text descriptor
# ---------------------------------------------------------------------------

def apply_swaps(detections: list[CharDetection]) -> PlateReading:
    """Convert left-to-right detections into a 7-slot LLLDDDD reading.

    Keeps the 7 most confident detections (preserving spatial order),
    remaps confusable digit/letter glyphs to fit the slot class, keeps
    unmappable violations flagged, and pads missing trailing slots.
    """
    if len(detections) > PLATE_SLOTS:
        order = sorted(range(len(detections)), key=lambda i: -detections[i].confidence)
        keep = sorted(order[:PLATE_SLOTS])
        detections = [detections[i] for i in keep]

    slots: list[tuple[str, float]] = []
    flags: list[str] = []
    for k, det in enumerate(detections):
        symbol = det.symbol
        flag = ""
        if PLATE_LAYOUT[k] == "L" and symbol in DIGITS:
            if symbol in DIGIT_TO_LETTER:
                symbol = DIGIT_TO_LETTER[symbol]
            else:
                flag = "violation"
        elif PLATE_LAYOUT[k] == "D" and symbol in LETTERS:
            if symbol in LETTER_TO_DIGIT:
                symbol = LETTER_TO_DIGIT[symbol]
            else:
                flag = "violation"
        slots.append((symbol, det.confidence))
        flags.append(flag)
    while len(slots) < PLATE_SLOTS:
        slots.append((PADDING_SYMBOL, 0.0))
        flags.append("padded")
    return PlateReading(tuple(slots), tuple(flags))


OCR_DESCRIPTOR_DIM = 2 * PLATE_SLOTS + PLATE_SLOTS + 2 * PLATE_SLOTS  # 35


def build_ocr_descriptor(r1: PlateReading, r2: PlateReading) -> np.ndarray:
    """35-value descriptor: plate-1 [mapping, confidence] pairs, the 7 slot
    distances, then plate-2 pairs."""
    if len(r1.slots) != len(r2.slots):
        raise ValueError("readings must have the same slot count")
    values: list[float] = []
    for sym, conf in r1.slots:
        values.extend((map_char(sym), conf))
    for (s1, _), (s2, _) in zip(r1.slots, r2.slots):
        values.append(float(char_distance(s1, s2)))
    for sym, conf in r2.slots:
        values.extend((map_char(sym), conf))
    return np.asarray(values, dtype=np.float64)


def read_plate(net: CnnOcr, patch: PlatePatch | np.ndarray,
               conf_threshold: float = DEFAULT_CONF_THRESHOLD,
               nms_iou: float = DEFAULT_NMS_IOU) -> PlateReading:
    """Run the detector on one plate patch and assemble the reading."""
    from .shape_stream import patch_to_tensor
    pixels = patch.pixels if isinstance(patch, PlatePatch) else patch
    net.eval()
    with torch.inference_mode():
        out = net(patch_to_tensor(pixels))
    detections = decode_detections(detection_map(out), conf_threshold, nms_iou)
    return apply_swaps(detections)


# ---------------------------------------------------------------------------
# Detector training (single-scale anchor assignment)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CharLabel:
    """One character box: class index plus center/size normalized to [0,1]."""

    class_index: int
    cx: float
    cy: float
    w: float
    h: float


def labels_to_text(labels: list[CharLabel]) -> str:
    return "".join(f"{l.class_index} {l.cx:.6f} {l.cy:.6f} {l.w:.6f} {l.h:.6f}\n" for l in labels)


def labels_from_text(text: str) -> list[CharLabel]:
    labels = []
    for line in text.splitlines():
        if not line.strip():
            continue
        cls, cx, cy, w, h = line.split()
        labels.append(CharLabel(int(cls), float(cx), float(cy), float(w), float(h)))
    return labels


def augment_ocr_sample(pixels: np.ndarray, labels: list[CharLabel],
                       rng: np.random.Generator) -> tuple[np.ndarray, list[CharLabel]]:
    """Plate-range augmentation draw applied to both image and label boxes.

    Boxes become the axis-aligned hulls of their warped corners; characters
    pushed (mostly) outside the patch are dropped.
    """
    from .ingest import PlatePatch, apply_plate_augment, draw_plate_augment, plate_augment_matrix

    params = draw_plate_augment(rng)
    warped = apply_plate_augment(PlatePatch(pixels, ("", 0, 0)), params).pixels
    m = plate_augment_matrix(params)
    out: list[CharLabel] = []
    for lab in labels:
        cx, cy = lab.cx * PLATE_WIDTH, lab.cy * PLATE_HEIGHT
        hw, hh = lab.w * PLATE_WIDTH / 2.0, lab.h * PLATE_HEIGHT / 2.0
        corners = np.array([[cx - hw, cx + hw, cx + hw, cx - hw],
                            [cy - hh, cy - hh, cy + hh, cy + hh],
                            [1.0, 1.0, 1.0, 1.0]])
        wx, wy = (m @ corners)[:2]
        ncx, ncy = (wx.min() + wx.max()) / 2.0, (wy.min() + wy.max()) / 2.0
        if not (0.0 <= ncx < PLATE_WIDTH and 0.0 <= ncy < PLATE_HEIGHT):
            continue
        out.append(CharLabel(lab.class_index, ncx / PLATE_WIDTH, ncy / PLATE_HEIGHT,
                             (wx.max() - wx.min()) / PLATE_WIDTH,
                             (wy.max() - wy.min()) / PLATE_HEIGHT))
    return warped, out


def _wh_iou(w1: float, h1: float, w2: float, h2: float) -> float:
    inter = min(w1, w2) * min(h1, h2)
    return inter / (w1 * h1 + w2 * h2 - inter)


def build_targets(labels: list[CharLabel],
                  anchors: tuple[tuple[float, float], ...] = DEFAULT_ANCHORS):
    """Assign each label to its center cell and best-matching anchor.

    Returns (row, col, anchor, tx, ty, tw, th, class) tuples with the
    regression targets in decode space.
    """
    assigned = []
    for lab in labels:
        cx_cells = min(lab.cx, 1.0 - 1e-9) * GRID_W
        cy_cells = min(lab.cy, 1.0 - 1e-9) * GRID_H
        col, row = int(cx_cells), int(cy_cells)
        w_px, h_px = lab.w * PLATE_WIDTH, lab.h * PLATE_HEIGHT
        a = max(range(len(anchors)), key=lambda i: _wh_iou(w_px, h_px, *anchors[i]))
        assigned.append((row, col, a,
                         cx_cells - col, cy_cells - row,
                         float(np.log(w_px / anchors[a][0])), float(np.log(h_px / anchors[a][1])),
                         lab.class_index))
    return assigned


def detection_loss(output: torch.Tensor, batch_labels: list[list[CharLabel]],
                   anchors: tuple[tuple[float, float], ...] = DEFAULT_ANCHORS,
                   coord_weight: float = 5.0, noobj_weight: float = 0.5) -> torch.Tensor:
    """Squared-error coords, binary cross-entropy objectness, cross-entropy class."""
    n = output.shape[0]
    v = output.view(n, len(anchors), ANCHOR_ATTRS, GRID_H, GRID_W)
    obj_logits = v[:, :, 4]
    obj_target = torch.zeros_like(obj_logits)
    obj_mask = torch.full_like(obj_logits, noobj_weight)

    coord_loss = output.new_zeros(())
    class_loss = output.new_zeros(())
    n_pos = 0
    for i, labels in enumerate(batch_labels):
        for row, col, a, tx, ty, tw, th, cls in build_targets(labels, anchors):
            pred = v[i, a, :, row, col]
            coord_loss = coord_loss + (torch.sigmoid(pred[0]) - tx) ** 2 + (torch.sigmoid(pred[1]) - ty) ** 2
            coord_loss = coord_loss + (pred[2] - tw) ** 2 + (pred[3] - th) ** 2
            class_loss = class_loss + nn.functional.cross_entropy(
                pred[5:].unsqueeze(0), torch.tensor([cls], device=output.device))
            obj_target[i, a, row, col] = 1.0
            obj_mask[i, a, row, col] = 1.0
            n_pos += 1
    obj_loss = (obj_mask * nn.functional.binary_cross_entropy_with_logits(
        obj_logits, obj_target, reduction="none")).sum()
    total = coord_weight * coord_loss + obj_loss + class_loss
    return total / max(n_pos, 1)


def fit_cnn_ocr(net: CnnOcr, samples: list[tuple[np.ndarray, list[CharLabel]]],
                epochs: int = 10, learning_rate: float = 1e-3, batch_size: int = 8,
                seed: int = 0, augment: bool = False, log=None) -> list[float]:
    """Train the detector on (patch, labels) samples; returns per-epoch losses."""
    from .shape_stream import patches_to_tensor
    if not samples:
        raise ValueError("empty OCR training set")
    rng = np.random.default_rng(seed)
    optimizer = torch.optim.Adam(net.parameters(), lr=learning_rate)
    net.train()
    history = []
    for epoch in range(epochs):
        order = rng.permutation(len(samples))
        total, count = 0.0, 0
        for start in range(0, len(order), batch_size):
            batch = [samples[i] for i in order[start:start + batch_size]]
            if augment:
                batch = [augment_ocr_sample(p, labels, rng) for p, labels in batch]
            x = patches_to_tensor([p for p, _ in batch])
            loss = detection_loss(net(x), [labels for _, labels in batch])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(loss.detach())
            count += 1
        history.append(total / count)
        if log is not None:
            log(f"ocr epoch {epoch + 1}/{epochs}: loss {history[-1]:.4f}")
    net.eval()
    return history
