"""Dual backbone: trainable domain feature extractor plus frozen general one.

The domain extractor maps (B, 3, H, W) images to (B, c, H/16, W/16)
feature maps through four stride-2 conv stages.  The general extractor
is a frozen, seed-initialized conv encoder pooled to a single vector;
it stands in for a large pre-trained embedding model, so its weights
never receive gradients and never change during training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .layers import Conv2d, Linear, Module


@dataclass
class DfeConfig:
    image_size: int = 64
    stage_channels: tuple = (16, 32, 64, 64)

    @property
    def total_stride(self):
        return 2 ** len(self.stage_channels)

    @property
    def out_channels(self):
        return self.stage_channels[-1]

    @property
    def map_size(self):
        if self.image_size % self.total_stride:
            raise ValueError(
                f"image size {self.image_size} not divisible by total stride "
                f"{self.total_stride}")
        return self.image_size // self.total_stride


@dataclass
class GfeConfig:
    image_size: int = 64
    out_dim: int = 512
    stage_channels: tuple = (16, 32, 64)
    stage_strides: tuple = (4, 2, 2)
    seed: int = 777


class DomainFeatureExtractor(Module):
    """Trainable conv stack: kernel 3, stride 2, ReLU per stage."""

    def __init__(self, cfg, rng, dtype=np.float32):
        self.cfg = cfg
        stages = []
        in_ch = 3
        for out_ch in cfg.stage_channels:
            stages.append(Conv2d(in_ch, out_ch, kernel=3, stride=2, padding=1,
                                 rng=rng, dtype=dtype))
            in_ch = out_ch
        self.stages = stages
        _ = cfg.map_size  # validate divisibility up front

    def __call__(self, x):
        self._check_resolution(x)
        taps = {}
        out = x
        for i, stage in enumerate(self.stages):
            out = T.relu(stage(out))
            taps[f"dfe.stage{i}"] = out
        taps["dfe"] = out
        return out, taps

    def _check_resolution(self, x):
        h, w = x.shape[-2], x.shape[-1]
        expected = self.cfg.image_size
        if h != expected or w != expected:
            raise ShapeError(
                f"domain extractor expects {expected}x{expected} input, "
                f"got {h}x{w}")


class GeneralFeatureExtractor(Module):
    """Frozen conv encoder + GAP + linear projection to out_dim."""

    def __init__(self, cfg, dtype=np.float32):
        rng = np.random.default_rng(cfg.seed)
        self.cfg = cfg
        stages = []
        in_ch = 3
        for out_ch, stride in zip(cfg.stage_channels, cfg.stage_strides):
            stages.append(Conv2d(in_ch, out_ch, kernel=3, stride=stride,
                                 padding=1, rng=rng, dtype=dtype))
            in_ch = out_ch
        self.stages = stages
        self.project = Linear(in_ch, cfg.out_dim, rng, dtype)
        self.freeze()

    def __call__(self, x):
        h, w = x.shape[-2], x.shape[-1]
        if h != self.cfg.image_size or w != self.cfg.image_size:
            raise ShapeError(
                f"general extractor expects {self.cfg.image_size}x"
                f"{self.cfg.image_size} input, got {h}x{w}")
        # Weights are frozen, so no graph is recorded unless the input
        # itself requires grad (in which case gradient reaches the input
        # but the weights still receive none).
        out = x
        for stage in self.stages:
            out = T.relu(stage(out))
        pooled = T.global_avg_pool(out)
        return self.project(pooled)

    def checksum(self):
        """Order-sensitive digest of all weights; must survive training."""
        acc = 0.0
        for _, t in self.named_tensors():
            acc += float(np.abs(t.data.astype(np.float64)).sum())
        return acc
