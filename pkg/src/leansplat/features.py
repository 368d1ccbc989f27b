"""Image encoder: a pixel-aligned UNet branch fused with a coarse strided branch.

The coarse branch stands in for a pretrained depth-aware backbone and shares
its role in the fusion: it is upsampled to full resolution, added to the UNet
features, mixed by a 3x3 conv and reduced by a kernel=stride patch conv.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import adcore as ad
from .adcore import Array
from .nn import Conv2d, Module


@dataclass(frozen=True)
class FeatureConfig:
    channels: int = 64
    unet_base: int = 32
    scale: int = 14
    use_unet: bool = True


def patch_padding(size: int, scale: int) -> tuple[int, int]:
    """Zero padding (before, after) that makes ``size`` a multiple of ``scale``."""
    total = -size % scale
    return total // 2, total - total // 2


@dataclass
class FeatureMap:
    data: Array  # [C, H_f, W_f]
    scale: int
    pad_left: int = 0
    pad_top: int = 0

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def pixel_to_grid(self, xy: np.ndarray) -> np.ndarray:
        """Image pixel coords -> continuous feature-cell coords (cell centers at integers)."""
        xy = np.asarray(xy, dtype=np.float64)
        half = (self.scale - 1) / 2.0
        out = np.empty_like(xy)
        out[..., 0] = (xy[..., 0] + self.pad_left - half) / self.scale
        out[..., 1] = (xy[..., 1] + self.pad_top - half) / self.scale
        return out


class FeatureExtractor(Module):
    def __init__(self, rng: np.random.Generator, cfg: FeatureConfig = FeatureConfig()):
        b = cfg.unet_base
        self._cfg = cfg
        if cfg.use_unet:
            self.enc0 = Conv2d(rng, 3, b, 3)
            self.enc1 = Conv2d(rng, b, 2 * b, 3, stride=2)
            self.enc2 = Conv2d(rng, 2 * b, 4 * b, 3, stride=2)
            self.lat1 = Conv2d(rng, 4 * b, 2 * b, 1)
            self.dec1 = Conv2d(rng, 2 * b, 2 * b, 3)
            self.lat0 = Conv2d(rng, 2 * b, b, 1)
            self.dec0 = Conv2d(rng, b, b, 3)
        self.deep1 = Conv2d(rng, 3, b, 3, stride=2)
        self.deep2 = Conv2d(rng, b, 2 * b, 3, stride=2)
        self.deep3 = Conv2d(rng, 2 * b, 2 * b, 3)
        self.deep_out = Conv2d(rng, 2 * b, b, 1)
        self.fuse = Conv2d(rng, b, cfg.channels, 3)
        self.patch = Conv2d(rng, cfg.channels, cfg.channels, cfg.scale, stride=cfg.scale, padding=0)

    @property
    def config(self) -> FeatureConfig:
        return self._cfg

    def unet(self, img: Array) -> Array:
        _, h, w = img.shape
        e0 = ad.relu(self.enc0(img))
        e1 = ad.relu(self.enc1(e0))
        e2 = ad.relu(self.enc2(e1))
        u1 = ad.upsample_bilinear(self.lat1(e2), e1.shape[1], e1.shape[2])
        d1 = ad.relu(self.dec1(u1 + e1))
        u0 = ad.upsample_bilinear(self.lat0(d1), h, w)
        return ad.relu(self.dec0(u0 + e0))

    def deep(self, img: Array) -> Array:
        x = ad.relu(self.deep1(img))
        x = ad.relu(self.deep2(x))
        x = ad.relu(self.deep3(x))
        return self.deep_out(x)

    def __call__(self, img: Array) -> FeatureMap:
        img = ad.as_array(img)
        if img.ndim != 3 or img.shape[0] != 3:
            raise ValueError(f"expected a [3,H,W] image, got {img.shape}")
        _, h, w = img.shape
        if h % 4 or w % 4:
            raise ValueError(f"image size {h}x{w} must be a multiple of 4")
        fused = ad.upsample_bilinear(self.deep(img), h, w)
        if self._cfg.use_unet:
            fused = fused + self.unet(img)
        fused = ad.relu(self.fuse(ad.relu(fused)))
        s = self._cfg.scale
        top, bottom = patch_padding(h, s)
        left, right = patch_padding(w, s)
        if top or bottom or left or right:
            fused = ad.pad2d(fused, (top, bottom, left, right))
        return FeatureMap(self.patch(fused), s, pad_left=left, pad_top=top)


def extract(extractor: FeatureExtractor, img) -> FeatureMap:
    return extractor(img)
