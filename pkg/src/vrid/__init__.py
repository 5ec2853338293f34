"""Two-stream vehicle re-identification: Siamese shape matching fused with
license-plate text descriptors, plus the data, training, and evaluation
machinery to run the pipeline end to end."""

__version__ = "0.1.0"

from .alphabet import ALPHABET, char_distance, map_char
from .evalkit import f_score, plate_match_tolerance, precision_recall, run_cross_validation
from .fusion import FusionHead, MatchDecision, TrainConfig, TwoStreamNet, fuse_forward, train_two_stream
from .ingest import (Box, PlatePatch, ShapePatch, VehicleAnnotation, augment_plate, augment_shape,
                     extract_plate_patch, extract_shape_patch, parse_ground_truth,
                     serialize_ground_truth)
from .ocr_stream import (CharDetection, CnnOcr, PlateReading, apply_swaps, build_cnn_ocr,
                         build_ocr_descriptor, decode_detections, read_plate)
from .pairgen import PairSample, SplitPlan, build_pairs, make_split_plan
from .shape_stream import SmallVgg, build_small_vgg, embed, shape_descriptor
from .synthgen import SynthCorpus, SynthSpec, generate

__all__ = [
    "ALPHABET", "Box", "CharDetection", "CnnOcr", "FusionHead", "MatchDecision",
    "PairSample", "PlatePatch", "PlateReading", "ShapePatch", "SmallVgg", "SplitPlan",
    "SynthCorpus", "SynthSpec", "TrainConfig", "TwoStreamNet", "VehicleAnnotation",
    "apply_swaps", "augment_plate", "augment_shape", "build_cnn_ocr", "build_ocr_descriptor",
    "build_pairs", "build_small_vgg", "char_distance", "decode_detections", "embed",
    "extract_plate_patch", "extract_shape_patch", "f_score", "fuse_forward", "generate",
    "make_split_plan", "map_char", "parse_ground_truth", "plate_match_tolerance",
    "precision_recall", "read_plate", "run_cross_validation", "serialize_ground_truth",
    "shape_descriptor", "train_two_stream",
]
