"""Two-stream fusion: concatenated descriptors, decision head, training.

The head takes the 2048-value shape descriptor and the 35-value text
descriptor (2083 inputs), passes them through two fully connected layers
of 512 units with rectified-linear activations, and a final 2-unit layer
with softmax over {matching, non-matching}.

Training optimizes the Siamese backbone and the head jointly with
cross-entropy; the character detector is trained separately and stays
frozen, entering only through the precomputed text descriptors.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np
import torch
from torch import nn

from .checkpoints import FORMAT_VERSION, CheckpointError
from .ocr_stream import OCR_DESCRIPTOR_DIM, CnnOcr
from .pairgen import MATCHING, NON_MATCHING, PairSample
from .shape_stream import EMBEDDING_DIM, SmallVgg, reinit_uniform_fanin_

FUSED_DIM = EMBEDDING_DIM + OCR_DESCRIPTOR_DIM  # 2083
HEAD_HIDDEN = 512


@dataclass(frozen=True)
class MatchDecision:
    p_match: float
    p_nonmatch: float

    @property
    def label(self) -> str:
        return MATCHING if self.p_match >= self.p_nonmatch else NON_MATCHING


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 128
    epochs: int = 10
    seed: int = 0
    augment: bool = True
    negative_ratio: float = 4.0  # per-epoch cap on non-matching:matching

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.epochs <= 0:
            raise ValueError("hyperparameters must be positive")


class FusionHead(nn.Module):
    """FC(512) -> ReLU -> FC(512) -> ReLU -> FC(2)."""

    def __init__(self, input_dim: int = FUSED_DIM, hidden: int = HEAD_HIDDEN):
        super().__init__()
        self.input_dim = input_dim
        self.layers = nn.Sequential(
            nn.Linear(input_dim, hidden), nn.ReLU(inplace=True),
            nn.Linear(hidden, hidden), nn.ReLU(inplace=True),
            nn.Linear(hidden, 2),
        )

    def forward(self, fused: torch.Tensor) -> torch.Tensor:
        if fused.shape[-1] != self.input_dim:
            raise ValueError(f"fused descriptor length {fused.shape[-1]}, expected {self.input_dim}")
        return self.layers(fused)


def fuse_forward(s: np.ndarray, p: np.ndarray, head: FusionHead) -> MatchDecision:
    """Classify one (shape descriptor, text descriptor) pair."""
    s = np.asarray(s, dtype=np.float32)
    p = np.asarray(p, dtype=np.float32)
    if s.shape != (EMBEDDING_DIM,):
        raise ValueError(f"shape descriptor must have length {EMBEDDING_DIM}, got {s.shape}")
    if p.shape != (OCR_DESCRIPTOR_DIM,):
        raise ValueError(f"text descriptor must have length {OCR_DESCRIPTOR_DIM}, got {p.shape}")
    head.eval()
    with torch.inference_mode():
        logits = head(torch.from_numpy(np.concatenate([s, p]))[None])
        probs = torch.softmax(logits, dim=-1)[0]
    return MatchDecision(float(probs[0]), float(probs[1]))


class TwoStreamNet(nn.Module):
    """Siamese backbone plus fusion head; set ``use_ocr=False`` for the
    shape-only ablation (the head then sees only the shape descriptor)."""

    def __init__(self, use_ocr: bool = True, seed: int | None = None):
        super().__init__()
        self.use_ocr = use_ocr
        self.backbone = SmallVgg()
        self.head = FusionHead(FUSED_DIM if use_ocr else EMBEDDING_DIM)
        if seed is not None:
            reinit_uniform_fanin_(self, seed)

    def forward(self, shape_a: torch.Tensor, shape_b: torch.Tensor,
                ocr_descriptor: torch.Tensor | None) -> torch.Tensor:
        e1 = self.backbone.embed(shape_a)
        e2 = self.backbone.embed(shape_b)
        s = torch.abs(e1 - e2)
        if self.use_ocr:
            if ocr_descriptor is None:
                raise ValueError("this model requires the text descriptor")
            s = torch.cat([s, ocr_descriptor.to(s.dtype)], dim=1)
        return self.head(s)

    def decide(self, shape_a, shape_b, ocr_descriptor) -> list[MatchDecision]:
        self.eval()
        with torch.inference_mode():
            probs = torch.softmax(self.forward(shape_a, shape_b, ocr_descriptor), dim=-1)
        return [MatchDecision(float(p[0]), float(p[1])) for p in probs]


class PairBatchSource(Protocol):
    """Materializes pair tensors: (shape_a, shape_b, ocr_descriptor, labels).

    Labels are 0 for matching, 1 for non-matching, mirroring the head's
    output order. ``train=True`` enables augmentation draws.
    """

    def batch(self, pairs: list[PairSample], train: bool) -> tuple[
            torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]: ...


@dataclass
class TrainResult:
    best_epoch: int
    best_val_f: float
    train_losses: list[float]
    val_fscores: list[float]


def _epoch_pairs(pairs: list[PairSample], cfg: TrainConfig, rng: np.random.Generator) -> list[PairSample]:
    pos = [p for p in pairs if p.is_matching]
    neg = [p for p in pairs if not p.is_matching]
    cap = int(cfg.negative_ratio * len(pos))
    if pos and len(neg) > cap:
        keep = rng.choice(len(neg), size=cap, replace=False)
        neg = [neg[i] for i in keep]
    pool = pos + neg
    order = rng.permutation(len(pool))
    return [pool[i] for i in order]


def _fscore_on(model: TwoStreamNet, source: PairBatchSource, pairs: list[PairSample],
               batch_size: int) -> float:
    from .evalkit import confusion_from_predictions, f_score, precision_recall
    predicted = predict_pairs(model, source, pairs, batch_size)
    tp, fp, fn = confusion_from_predictions(
        [p.label for p in pairs], [d.label for d in predicted])
    return f_score(*precision_recall(tp, fp, fn))


def train_two_stream(model: TwoStreamNet, source: PairBatchSource,
                     train_pairs: list[PairSample], val_pairs: list[PairSample],
                     cfg: TrainConfig, log=None) -> TrainResult:
    """Joint cross-entropy training; returns the epoch with best validation
    F-score, with those weights loaded back into ``model``."""
    if not train_pairs or not val_pairs:
        raise ValueError("training and validation pair pools must be nonempty")
    if not any(p.is_matching for p in train_pairs):
        raise ValueError("training pool has no matching pairs")

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    loss_fn = nn.CrossEntropyLoss()

    best_state = None
    best_f = -1.0
    best_epoch = -1
    train_losses: list[float] = []
    val_fscores: list[float] = []
    for epoch in range(cfg.epochs):
        model.train()
        pool = _epoch_pairs(train_pairs, cfg, rng)
        total, batches = 0.0, 0
        for start in range(0, len(pool), cfg.batch_size):
            chunk = pool[start:start + cfg.batch_size]
            shape_a, shape_b, ocr_p, labels = source.batch(chunk, train=cfg.augment)
            logits = model(shape_a, shape_b, ocr_p if model.use_ocr else None)
            loss = loss_fn(logits, labels)
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"training diverged: non-finite loss at epoch {epoch + 1}, "
                    f"batch {batches + 1} (lr={cfg.learning_rate}, batch_size={cfg.batch_size})")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(loss.detach())
            batches += 1
        train_losses.append(total / max(batches, 1))

        val_f = _fscore_on(model, source, val_pairs, cfg.batch_size)
        val_fscores.append(val_f)
        if val_f > best_f:
            best_f = val_f
            best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        if log is not None:
            log(f"epoch {epoch + 1}/{cfg.epochs}: loss {train_losses[-1]:.4f}, val F {val_f:.4f}")

    model.load_state_dict(best_state)
    model.eval()
    return TrainResult(best_epoch, best_f, train_losses, val_fscores)


def predict_pairs(model: TwoStreamNet, source: PairBatchSource,
                  pairs: list[PairSample], batch_size: int = 128) -> list[MatchDecision]:
    decisions: list[MatchDecision] = []
    for start in range(0, len(pairs), batch_size):
        chunk = pairs[start:start + batch_size]
        shape_a, shape_b, ocr_p, _ = source.batch(chunk, train=False)
        decisions.extend(model.decide(shape_a, shape_b, ocr_p if model.use_ocr else None))
    return decisions


# ---------------------------------------------------------------------------
# Combined checkpoint bundle
# ---------------------------------------------------------------------------

def save_bundle(path: str | Path, model: TwoStreamNet, ocr_net: CnnOcr | None,
                config_hash: str = "") -> None:
    blob = {
        "format_version": FORMAT_VERSION,
        "kind": "two_stream_bundle",
        "use_ocr": model.use_ocr,
        "shape": model.backbone.state_dict(),
        "head": model.head.state_dict(),
        "ocr": ocr_net.state_dict() if ocr_net is not None else None,
        "config_hash": config_hash,
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(blob, path)


def load_bundle(path: str | Path) -> tuple[TwoStreamNet, CnnOcr | None, dict]:
    try:
        blob = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise CheckpointError(f"bundle not found: {path}") from None
    if blob.get("format_version") != FORMAT_VERSION or blob.get("kind") != "two_stream_bundle":
        raise CheckpointError(f"{path} is not a supported two-stream bundle")
    model = TwoStreamNet(use_ocr=blob["use_ocr"])
    model.backbone.load_state_dict(blob["shape"])
    model.head.load_state_dict(blob["head"])
    ocr_net = None
    if blob.get("ocr") is not None:
        ocr_net = CnnOcr()
        ocr_net.load_state_dict(blob["ocr"])
    model.eval()
    return model, ocr_net, blob
