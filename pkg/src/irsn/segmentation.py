"""Item region masks: acquisition, downsampling, absence detection.

Masks arrive from one of two sources: the oracle segmenter reads exact
ground truth off a synthetic sample; the file segmenter loads binary
PGM masks from disk (255 = inside the region).  Both return the four
items in the fixed order head, top, bottom, shoes.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import DatasetError, ShapeError
from .pnm import read_pgm, write_pgm

ITEM_NAMES = ("head", "top", "bottom", "shoes")

# Items whose full-resolution coverage falls below this fraction are
# treated as absent and their importance maps zeroed.
DEFAULT_ABSENCE_TAU = 0.005


@dataclass
class ItemMask:
    """Full-resolution binary mask for one item region."""

    item: str
    full: np.ndarray  # (H, W) uint8 in {0, 1}
    coverage: float

    @classmethod
    def from_binary(cls, item, full):
        full = np.asarray(full)
        if not np.isin(full, (0, 1)).all():
            raise ValueError(f"mask for {item!r} has entries outside {{0, 1}}")
        full = full.astype(np.uint8)
        return cls(item=item, full=full, coverage=float(full.mean()))


class OracleSegmenter:
    """Returns the generator's exact masks for a synthetic sample."""

    def segment(self, sample):
        return [ItemMask.from_binary(name, m)
                for name, m in zip(ITEM_NAMES, sample.masks)]


class FileMaskSegmenter:
    """Loads <sample_id>_<item>.pgm masks from a directory."""

    def __init__(self, root):
        self.root = root

    def segment(self, sample_id):
        masks = []
        for name in ITEM_NAMES:
            path = os.path.join(self.root, f"{sample_id}_{name}.pgm")
            if not os.path.exists(path):
                raise DatasetError(f"missing mask file {path}")
            raw = read_pgm(path)
            masks.append(ItemMask.from_binary(name, raw >= 128))
        return masks


def save_mask(path, mask):
    """Write an ItemMask as PGM: 255 inside the region, 0 outside."""
    write_pgm(path, mask.full * np.uint8(255))


def segment_items(x, source):
    """Four masks at full input resolution, fixed head/top/bottom/shoes order."""
    masks = source.segment(x)
    if len(masks) != 4 or tuple(m.item for m in masks) != ITEM_NAMES:
        raise ValueError("segmenter must return head, top, bottom, shoes in order")
    return masks


def downsample_mask(full, out_h, out_w, mode="area"):
    """Reduce a binary H x W mask to a fractional-coverage (out_h, out_w) map.

    "area" averages each floor/ceil window (same partition as adaptive
    average pooling), giving the fraction of covered pixels per cell.
    "nearest" samples the window-center pixel instead.
    """
    full = np.asarray(full, dtype=np.float32)
    h, w = full.shape
    if out_h > h or out_w > w:
        raise ShapeError(
            f"downsample_mask: target ({out_h}x{out_w}) exceeds source ({h}x{w})")
    rows = [(math.floor(i * h / out_h), math.ceil((i + 1) * h / out_h))
            for i in range(out_h)]
    cols = [(math.floor(j * w / out_w), math.ceil((j + 1) * w / out_w))
            for j in range(out_w)]
    out = np.empty((out_h, out_w), dtype=np.float32)
    if mode == "area":
        for i, (r0, r1) in enumerate(rows):
            for j, (c0, c1) in enumerate(cols):
                out[i, j] = full[r0:r1, c0:c1].mean()
    elif mode == "nearest":
        for i, (r0, r1) in enumerate(rows):
            for j, (c0, c1) in enumerate(cols):
                out[i, j] = full[(r0 + r1) // 2, (c0 + c1) // 2]
    else:
        raise ValueError(f"unknown downsample mode {mode!r}")
    return out


def detect_absent(mask, tau=DEFAULT_ABSENCE_TAU):
    """True iff coverage is strictly below tau."""
    if not 0.0 <= tau < 1.0:
        raise ValueError(f"tau must be in [0, 1), got {tau}")
    return mask.coverage < tau
