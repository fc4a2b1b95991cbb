"""Shift-tolerant instruction accuracy, pseudo-confidence and the scale sweep."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .instructions import CODES, NUM_INSTRUCTIONS, DimensionMismatch, InstructionMap
from .neural.losses import ALL_SHIFTS, Shift
from .neural.train import infer_batch
from .render import center_crop, resize

STITCHES = 20


class ImageTooSmall(ValueError):
    def __init__(self, scale: float, needed: int, shape: tuple[int, int]):
        super().__init__(f"scale {scale} needs a {needed}px crop but the image is {shape[1]}x{shape[0]}")
        self.scale = scale


def _as_codes(pred) -> np.ndarray:
    if isinstance(pred, InstructionMap):
        return pred.codes
    arr = np.asarray(pred)
    if arr.ndim == 3 and arr.shape[-1] == NUM_INSTRUCTIONS:
        return arr.argmax(axis=-1)  # ties resolve to the lowest code
    return arr


@dataclass
class AccuracyReport:
    full: float
    fg: float
    per_instruction: dict[str, tuple[float, float]]
    confusion: np.ndarray
    best_shifts: list[Shift] = field(default_factory=list)
    per_image_full: list[float] = field(default_factory=list)
    per_image_fg: list[float] = field(default_factory=list)

    def to_tsv(self) -> str:
        acc = [self.per_instruction[c][0] for c in CODES]
        freq = [self.per_instruction[c][1] for c in CODES]
        fmt = lambda v: "nan" if np.isnan(v) else f"{100 * v:.2f}"  # noqa: E731
        lines = ["\t" + "\t".join(CODES),
                 "accuracy %\t" + "\t".join(fmt(v) for v in acc),
                 "frequency %\t" + "\t".join(fmt(v) for v in freq),
                 f"FULL %\t{100 * self.full:.2f}",
                 f"FG %\t{100 * self.fg:.2f}"]
        return "\n".join(lines) + "\n"

    def write_tsv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_tsv())


def _interior(a: np.ndarray, dx: int = 0, dy: int = 0) -> np.ndarray:
    h, w = a.shape
    return a[1 + dy:h - 1 + dy, 1 + dx:w - 1 + dx]


def shift_accuracy(preds: Sequence, gts: Sequence[InstructionMap],
                   shifts: Sequence[Shift] = ALL_SHIFTS) -> AccuracyReport:
    """FULL/FG accuracy over interior cells, each image at its best global shift.

    Shift order decides ties: (0, 0) first, then lexicographic.
    """
    if len(preds) != len(gts):
        raise DimensionMismatch(f"{len(preds)} predictions for {len(gts)} ground-truth maps")
    if not gts:
        raise ValueError("no images to score")
    confusion = np.zeros((NUM_INSTRUCTIONS, NUM_INSTRUCTIONS), dtype=np.int64)
    fulls, fgs, best = [], [], []
    for pred, gt in zip(preds, gts):
        p, g = _as_codes(pred), gt.codes
        if p.shape != g.shape:
            raise DimensionMismatch(f"prediction {p.shape} vs ground truth {g.shape}")
        if min(g.shape) < 3:
            raise DimensionMismatch("maps need at least 3x3 cells to have an interior")
        gi = _interior(g)
        scores = [(_interior(p, dx, dy) == gi).mean() for dx, dy in shifts]
        k = int(np.argmax(scores))
        d = tuple(shifts[k])
        pi = _interior(p, *d)
        background = np.bincount(gi.ravel(), minlength=NUM_INSTRUCTIONS).argmax()
        fg_mask = gi != background
        fulls.append(float(scores[k]))
        fgs.append(float((pi[fg_mask] == gi[fg_mask]).mean()) if fg_mask.any() else 1.0)
        best.append(d)
        np.add.at(confusion, (gi.ravel(), pi.ravel()), 1)
    counts = confusion.sum(axis=1)
    total = counts.sum()
    per_instruction = {}
    for i, code in enumerate(CODES):
        acc = confusion[i, i] / counts[i] if counts[i] else float("nan")
        per_instruction[code] = (float(acc), float(counts[i] / total))
    return AccuracyReport(float(np.mean(fulls)), float(np.mean(fgs)), per_instruction, confusion,
                          best, fulls, fgs)


def pseudo_confidence(softmax_map: np.ndarray) -> float:
    """Mean over cells of the largest class probability."""
    return float(np.asarray(softmax_map).max(axis=-1).mean())


@dataclass
class ScaleSweepResult:
    points: list[tuple[float, float]]

    @property
    def best_scale(self) -> float:
        confs = [c for _, c in self.points]
        return self.points[int(np.argmax(confs))][0]

    def to_tsv(self) -> str:
        return "scale\tpseudo_confidence\n" + "".join(f"{s:g}\t{c:.6f}\n" for s, c in self.points)


def sweep_crops(image: np.ndarray, scales: Sequence[float], stitches: int = STITCHES,
                size: int = 160) -> list[np.ndarray]:
    crops = []
    for scale in scales:
        needed = int(round(stitches * scale))
        if needed > min(image.shape) or needed < 1:
            raise ImageTooSmall(scale, needed, image.shape)
        crops.append(resize(center_crop(image, needed), size, size))
    return crops


def scale_sweep(model, image: np.ndarray, scales: Sequence[float]) -> ScaleSweepResult:
    """Center-crop 20 stitches at each candidate scale, resize to the network input, score."""
    crops = sweep_crops(image, scales)
    probs = infer_batch(model, crops)
    return ScaleSweepResult([(float(s), pseudo_confidence(p)) for s, p in zip(scales, probs)])
