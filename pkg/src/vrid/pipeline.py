"""Wiring between corpus data and the trainable models.

A ``DatasetView`` serves patches for any (vehicle, camera, frame) key
from parsed annotations plus a frame source (disk frames or an
in-memory synthetic corpus). Plate readings are computed once per
(vehicle, camera) on the annotated first occurrence -- the only frame
with a ground-truth plate box -- and cached; illegible vehicles get the
all-padding reading with zero confidences and a zero plate patch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from .fusion import PairBatchSource, TrainConfig, TrainResult, TwoStreamNet, predict_pairs, train_two_stream
from .ingest import (DEFAULT_SHAPE_EXPAND, FrameStore, ShapePatch, VehicleAnnotation,
                     augment_shape, extract_plate_patch, extract_shape_patch, to_unit_float)
from .ocr_stream import (CnnOcr, DEFAULT_CONF_THRESHOLD, DEFAULT_NMS_IOU, PlateReading,
                         build_ocr_descriptor, empty_reading, read_plate)
from .pairgen import PairSample, VehicleTrack, build_pairs, tracks_from_annotations
from .synthgen import SynthCorpus, video_name

FrameSource = Callable[[int, str, int], np.ndarray]  # (camera, set_id, frame) -> float image


class DatasetView:
    def __init__(self, annotations: dict[tuple[int, str], list[VehicleAnnotation]],
                 frame_source: FrameSource,
                 expand: tuple[float, float, float] = DEFAULT_SHAPE_EXPAND):
        self.annotations = annotations
        self.frame_source = frame_source
        self.expand = expand
        self._by_vehicle: dict[tuple[str, int], tuple[str, VehicleAnnotation]] = {}
        for (camera, set_id), anns in annotations.items():
            for a in anns:
                self._by_vehicle[(a.vehicle_id, camera)] = (set_id, a)
        self._shape_cache: dict[tuple[str, int, int], np.ndarray] = {}

    @classmethod
    def from_synth(cls, corpus: SynthCorpus,
                   expand: tuple[float, float, float] = DEFAULT_SHAPE_EXPAND) -> "DatasetView":
        annotations = {(camera, set_id): corpus.annotations(camera, set_id)
                       for set_id in corpus.set_ids() for camera in (1, 2)}
        source = lambda camera, set_id, frame: to_unit_float(corpus.frame(camera, set_id, frame))
        return cls(annotations, source, expand)

    @classmethod
    def from_directory(cls, root, set_ids: tuple[str, ...],
                       expand: tuple[float, float, float] = DEFAULT_SHAPE_EXPAND) -> "DatasetView":
        from pathlib import Path

        from .ingest import parse_ground_truth
        root = Path(root)
        store = FrameStore(root / "frames")
        annotations = {}
        for set_id in set_ids:
            for camera in (1, 2):
                xml_path = root / f"{video_name(camera, set_id)}.xml"
                annotations[(camera, set_id)] = parse_ground_truth(xml_path.read_text())
        source = lambda camera, set_id, frame: store.load(video_name(camera, set_id), frame)
        return cls(annotations, source, expand)

    def set_ids(self) -> tuple[str, ...]:
        return tuple(sorted({s for _, s in self.annotations}))

    def annotation(self, vehicle_id: str, camera: int) -> VehicleAnnotation:
        return self._by_vehicle[(vehicle_id, camera)][1]

    def tracks(self, camera: int, set_id: str) -> list[VehicleTrack]:
        return tracks_from_annotations(self.annotations[(camera, set_id)])

    def shape_patch(self, vehicle_id: str, camera: int, frame_index: int) -> np.ndarray:
        key = (vehicle_id, camera, frame_index)
        if key not in self._shape_cache:
            set_id, ann = self._by_vehicle[(vehicle_id, camera)]
            frame = self.frame_source(camera, set_id, frame_index)
            self._shape_cache[key] = extract_shape_patch(frame, ann, self.expand).pixels
        return self._shape_cache[key]

    def plate_patch(self, vehicle_id: str, camera: int, frame_index: int | None = None) -> np.ndarray:
        """Plate patch from the annotated box; defaults to the annotated frame."""
        set_id, ann = self._by_vehicle[(vehicle_id, camera)]
        if frame_index is None:
            frame_index = ann.frame_index
        frame = self.frame_source(camera, set_id, frame_index)
        return extract_plate_patch(frame, ann.plate_box).pixels

    def pairs_for_set(self, set_id: str, negative_ratio: float | None = None,
                      seed: int = 0) -> list[PairSample]:
        return build_pairs(self.tracks(1, set_id), self.tracks(2, set_id), set_id,
                           negative_ratio=negative_ratio, rng=np.random.default_rng(seed))


class ReadingBank:
    """Per-(vehicle, camera) plate readings from a frozen detector."""

    def __init__(self, dataset: DatasetView, ocr_net: CnnOcr,
                 conf_threshold: float = DEFAULT_CONF_THRESHOLD,
                 nms_iou: float = DEFAULT_NMS_IOU):
        self.dataset = dataset
        self.ocr_net = ocr_net
        self.conf_threshold = conf_threshold
        self.nms_iou = nms_iou
        self._cache: dict[tuple[str, int], PlateReading] = {}

    def reading(self, vehicle_id: str, camera: int) -> PlateReading:
        key = (vehicle_id, camera)
        if key not in self._cache:
            ann = self.dataset.annotation(vehicle_id, camera)
            if not ann.legible:
                self._cache[key] = empty_reading()
            else:
                patch = self.dataset.plate_patch(vehicle_id, camera)
                self._cache[key] = read_plate(self.ocr_net, patch,
                                              self.conf_threshold, self.nms_iou)
        return self._cache[key]

    def descriptor(self, pair: PairSample) -> np.ndarray:
        return build_ocr_descriptor(self.reading(pair.vehicle_1, 1),
                                    self.reading(pair.vehicle_2, 2))


class CorpusPairSource(PairBatchSource):
    """Materializes pair batches; augmentation applies to shape patches
    (plates enter only through the frozen detector's cached readings)."""

    def __init__(self, dataset: DatasetView, readings: ReadingBank | None,
                 augment_seed: int = 0):
        self.dataset = dataset
        self.readings = readings
        self._rng = np.random.default_rng(augment_seed)

    def _shape(self, vehicle_id: str, camera: int, frame: int, train: bool) -> np.ndarray:
        pixels = self.dataset.shape_patch(vehicle_id, camera, frame)
        if train:
            pixels = augment_shape(ShapePatch(pixels, (vehicle_id, camera, frame)), self._rng).pixels
        return pixels

    def batch(self, pairs: list[PairSample], train: bool):
        a = np.stack([self._shape(p.vehicle_1, 1, p.frame_1, train) for p in pairs])
        b = np.stack([self._shape(p.vehicle_2, 2, p.frame_2, train) for p in pairs])
        shape_a = torch.from_numpy(a.transpose(0, 3, 1, 2).copy())
        shape_b = torch.from_numpy(b.transpose(0, 3, 1, 2).copy())
        if self.readings is not None:
            descriptors = np.stack([self.readings.descriptor(p) for p in pairs])
            ocr = torch.from_numpy(descriptors.astype(np.float32))
        else:
            ocr = torch.zeros(len(pairs), 0)
        labels = torch.tensor([0 if p.is_matching else 1 for p in pairs])
        return shape_a, shape_b, ocr, labels


@dataclass
class FusionClassifier:
    """PairClassifier adapter used by the cross-validation runner."""

    source: CorpusPairSource
    cfg: TrainConfig
    use_ocr: bool = True
    log: Callable[[str], None] | None = None
    model: TwoStreamNet | None = None
    result: TrainResult | None = None

    def fit(self, train_pairs: list[PairSample], val_pairs: list[PairSample]) -> None:
        self.model = TwoStreamNet(use_ocr=self.use_ocr, seed=self.cfg.seed)
        self.result = train_two_stream(self.model, self.source, train_pairs, val_pairs,
                                       self.cfg, log=self.log)

    def predict(self, pairs: list[PairSample]) -> list[str]:
        if self.model is None:
            raise RuntimeError("predict called before fit")
        decisions = predict_pairs(self.model, self.source, pairs, self.cfg.batch_size)
        return [d.label for d in decisions]
