"""Differentiable Gaussian splatting renderer.

``render`` uses the tiled numba kernels; ``render_oracle`` composites every
Gaussian at every pixel with plain adcore ops and serves as ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .. import adcore as ad
from ..adcore import Array
from ..camera import Z_EPS, Camera
from ..gaussians import PhysicalGaussians, sh_color
from . import raster


@dataclass(frozen=True)
class RenderSettings:
    background: tuple = (1.0, 1.0, 1.0)
    tile: int = 16
    cov_reg: float = 0.3
    alpha_max: float = 0.999
    t_min: float = 1e-4
    early_stop: bool = True
    cull: bool = True
    # splats are binned out to where their peak alpha drops below this
    cull_alpha: float = 1e-4

    def exact(self) -> "RenderSettings":
        """Same compositing law with early stop and culling switched off."""
        return RenderSettings(self.background, self.tile, self.cov_reg, self.alpha_max, self.t_min,
                              early_stop=False, cull=False, cull_alpha=self.cull_alpha)


DEFAULT_SETTINGS = RenderSettings()


class Splat2D(NamedTuple):
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth_z: float
    opacity: float
    color: np.ndarray
    radius: float


@dataclass
class Splats:
    """Projected splats, sorted front to back (struct of arrays)."""

    means: Array  # [M,2] pixels
    covs: Array  # [M,2,2]
    conics: Array  # [M,3] inverse covariance (a, b, c)
    opacities: Array  # [M]
    colors: Array  # [M,3]
    depths: np.ndarray  # [M]
    radii: np.ndarray  # [M], 3 sqrt(max eigenvalue)
    extents: np.ndarray  # [M], binning half-width, >= radius
    source: np.ndarray  # [M], index into the input Gaussians

    def __len__(self) -> int:
        return len(self.depths)

    def __getitem__(self, k: int) -> Splat2D:
        return Splat2D(self.means.data[k].copy(), self.covs.data[k].copy(), float(self.depths[k]),
                       float(self.opacities.data[k]), self.colors.data[k].copy(), float(self.radii[k]))

    def __iter__(self) -> Iterator[Splat2D]:
        return (self[k] for k in range(len(self)))


@dataclass
class RenderedImage:
    rgb: Array  # [3,H,W]
    alpha: Array  # [H,W]


def _max_eig_2x2(cov: np.ndarray) -> np.ndarray:
    a, b, c = cov[:, 0, 0], cov[:, 0, 1], cov[:, 1, 1]
    mid = 0.5 * (a + c)
    return mid + np.sqrt(np.maximum(mid * mid - (a * c - b * b), 0.0))


def view_colors(g: PhysicalGaussians, cam_center: np.ndarray) -> Array:
    """SH colors seen from ``cam_center`` (differentiable through the means)."""
    d = g.means - Array(np.asarray(cam_center, dtype=g.means.dtype))
    dirs = d / ad.sqrt((d * d).sum(axis=1, keepdims=True))
    return sh_color(g.sh, dirs)


def prepare_splats(g: PhysicalGaussians, cam: Camera, settings: RenderSettings = DEFAULT_SETTINGS) -> Splats:
    """EWA-project world-frame Gaussians into ``cam``; cull and depth-sort."""
    dt = g.means.dtype
    pts_cam_all = cam.world_to_camera(g.means)
    keep = np.nonzero(pts_cam_all.data[:, 2] > Z_EPS)[0]
    if len(keep) < len(g):
        g = g.take(keep)
        pts_cam = ad.take(pts_cam_all, keep)
    else:
        pts_cam = pts_cam_all

    if len(keep) == 0:
        empty = Array(np.zeros((0, 2), dtype=dt))
        return Splats(empty, Array(np.zeros((0, 2, 2), dtype=dt)), Array(np.zeros((0, 3), dtype=dt)),
                      Array(np.zeros(0, dtype=dt)), Array(np.zeros((0, 3), dtype=dt)),
                      np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0, dtype=np.intp))

    means2d, depth, _ = cam.project_camera_points(pts_cam)
    jac = cam.projection_jacobian(pts_cam)
    w2c = np.ascontiguousarray(cam.rotation.T).astype(dt)
    jw = ad.matmul(jac, Array(w2c))
    cov2d = ad.matmul(ad.matmul(jw, g.covs), ad.transpose(jw, (0, 2, 1))) + Array(settings.cov_reg * np.eye(2, dtype=dt))
    colors = view_colors(g, cam.center)

    cov_np = cov2d.data
    max_eig = _max_eig_2x2(cov_np)
    radii = 3.0 * np.sqrt(max_eig)
    with np.errstate(divide="ignore"):
        k_alpha = np.sqrt(2.0 * np.log(np.maximum(g.opacities.data / settings.cull_alpha, 1.0)))
    extents = np.sqrt(max_eig) * np.maximum(3.0, k_alpha)

    sel = np.arange(len(keep))
    if settings.cull:
        m = means2d.data
        on = ((m[:, 0] + extents >= 0) & (m[:, 0] - extents <= cam.width - 1)
              & (m[:, 1] + extents >= 0) & (m[:, 1] - extents <= cam.height - 1))
        sel = sel[on]
    order = sel[np.argsort(depth.data[sel], kind="stable")]

    covs_s = ad.take(cov2d, order)
    a, b, c = covs_s[:, 0, 0], covs_s[:, 0, 1], covs_s[:, 1, 1]
    det = a * c - b * b
    conics = ad.stack([c / det, -b / det, a / det], axis=1)
    return Splats(
        means=ad.take(means2d, order),
        covs=covs_s,
        conics=conics,
        opacities=ad.take(g.opacities, order),
        colors=ad.take(colors, order),
        depths=depth.data[order].astype(np.float64),
        radii=radii[order],
        extents=extents[order],
        source=keep[order],
    )


def composite_pixel(splats: Sequence[Splat2D], p, *, alpha_max: float = 0.999, t_min: float = 1e-4,
                    early_stop: bool = True) -> tuple[np.ndarray, float]:
    """Front-to-back compositing at one pixel; returns (premultiplied rgb, alpha)."""
    p = np.asarray(p, dtype=np.float64)
    color = np.zeros(3)
    T = 1.0
    for sp in splats:
        d = p - np.asarray(sp.mean2d, dtype=np.float64)
        m = float(d @ np.linalg.solve(np.asarray(sp.cov2d, dtype=np.float64), d))
        alpha = min(alpha_max, sp.opacity * np.exp(-0.5 * m))
        color += np.asarray(sp.color) * alpha * T
        T *= 1.0 - alpha
        if early_stop and T < t_min:
            break
    return color, 1.0 - T


def _tile_ranges(splats: Splats, height: int, width: int, tile: int, cull: bool):
    n_tx = (width + tile - 1) // tile
    n_ty = (height + tile - 1) // tile
    n = len(splats)
    if not cull:
        x0 = np.zeros(n, dtype=np.int64)
        y0 = np.zeros(n, dtype=np.int64)
        return x0, np.full(n, n_tx - 1, dtype=np.int64), y0, np.full(n, n_ty - 1, dtype=np.int64), n_tx, n_ty
    m = splats.means.data
    e = splats.extents
    x0 = np.clip(np.floor((m[:, 0] - e) / tile), 0, n_tx - 1).astype(np.int64)
    x1 = np.clip(np.floor((m[:, 0] + e) / tile), 0, n_tx - 1).astype(np.int64)
    y0 = np.clip(np.floor((m[:, 1] - e) / tile), 0, n_ty - 1).astype(np.int64)
    y1 = np.clip(np.floor((m[:, 1] + e) / tile), 0, n_ty - 1).astype(np.int64)
    return x0, x1, y0, y1, n_tx, n_ty


def rasterize(splats: Splats, height: int, width: int, settings: RenderSettings = DEFAULT_SETTINGS) -> Array:
    """Composite sorted splats into a [4,H,W] array (rgb over background, alpha)."""
    dt = splats.means.dtype
    bg = np.asarray(settings.background, dtype=np.float64)
    if len(splats) == 0:
        out = np.empty((4, height, width), dtype=dt)
        out[:3] = bg[:, None, None]
        out[3] = 0.0
        return Array(out)
    x0, x1, y0, y1, n_tx, n_ty = _tile_ranges(splats, height, width, settings.tile, settings.cull)
    offsets, ids = raster.bin_splats(x0, x1, y0, y1, n_tx, n_ty)
    means = splats.means.data
    conics = splats.conics.data
    opac = splats.opacities.data
    colors = splats.colors.data
    args = (means, conics, opac, colors, bg, offsets, ids, height, width, settings.tile,
            settings.early_stop, settings.t_min, settings.alpha_max)
    out = raster.raster_forward(*args)

    def bw(g):
        partial = raster.raster_backward(*args, np.ascontiguousarray(g, dtype=np.float64))
        grads = raster.reduce_pairs(partial, ids, len(splats)).astype(dt, copy=False)
        return (grads[:, 0:2], grads[:, 2:5], grads[:, 5], grads[:, 6:9])

    return ad.record("rasterize", out, (splats.means, splats.conics, splats.opacities, splats.colors), bw)


def render(g: PhysicalGaussians, cam: Camera, settings: RenderSettings = DEFAULT_SETTINGS) -> RenderedImage:
    """Tiled render of world-frame Gaussians from ``cam``."""
    splats = prepare_splats(g, cam, settings)
    out = rasterize(splats, cam.height, cam.width, settings)
    return RenderedImage(out[0:3], out[3])


def render_oracle(g: PhysicalGaussians, cam: Camera, settings: RenderSettings = DEFAULT_SETTINGS) -> RenderedImage:
    """Every Gaussian at every pixel, no tiles, no culling, no early stop."""
    exact = settings.exact()
    splats = prepare_splats(g, cam, exact)
    h, w = cam.height, cam.width
    dt = splats.means.dtype
    bg = Array(np.asarray(settings.background, dtype=dt))
    if len(splats) == 0:
        rgb = np.broadcast_to(bg.data[:, None, None], (3, h, w)).copy()
        return RenderedImage(Array(rgb), Array(np.zeros((h, w), dtype=dt)))
    yy, xx = np.meshgrid(np.arange(h, dtype=dt), np.arange(w, dtype=dt), indexing="ij")
    px = Array(xx.reshape(-1, 1))
    py = Array(yy.reshape(-1, 1))
    mx = ad.reshape(splats.means[:, 0], (1, -1))
    my = ad.reshape(splats.means[:, 1], (1, -1))
    ca = ad.reshape(splats.conics[:, 0], (1, -1))
    cb = ad.reshape(splats.conics[:, 1], (1, -1))
    cc = ad.reshape(splats.conics[:, 2], (1, -1))
    dx = px - mx
    dy = py - my
    power = -0.5 * (ca * dx * dx + cc * dy * dy) - cb * dx * dy
    alpha = ad.clamp_max(ad.reshape(splats.opacities, (1, -1)) * ad.exp(power), exact.alpha_max)
    log_keep = ad.log(1.0 - alpha)
    cum = ad.cumsum(log_keep, axis=1)
    excl = ad.concat([Array(np.zeros((h * w, 1), dtype=dt)), cum[:, :-1]], axis=1)
    weights = alpha * ad.exp(excl)
    t_final = ad.exp(cum[:, -1:])
    rgb = ad.matmul(weights, splats.colors) + t_final * ad.reshape(bg, (1, 3))
    rgb = ad.reshape(ad.transpose(rgb, (1, 0)), (3, h, w))
    return RenderedImage(rgb, ad.reshape(1.0 - t_final, (h, w)))


# ----------------------------------------------------------------------
# image files
# ----------------------------------------------------------------------

def to_uint8(rgb: np.ndarray) -> np.ndarray:
    """[3,H,W] floats in [0,1] -> [H,W,3] uint8 (x255, rounded)."""
    arr = np.clip(np.asarray(rgb, dtype=np.float64), 0.0, 1.0)
    return np.rint(np.moveaxis(arr, 0, -1) * 255.0).astype(np.uint8)


def save_png(path: str | Path, rgb: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(to_uint8(rgb)).save(path)


def load_png(path: str | Path) -> np.ndarray:
    """PNG -> [3,H,W] float64 in [0,1]."""
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return np.ascontiguousarray(np.moveaxis(arr, -1, 0))
