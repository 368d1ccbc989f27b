"""24-parameter Gaussian representation and its activation.

Raw parameter layout per Gaussian::

    0       depth (pre-sigmoid)
    1:4     center offsets (dx, dy, dz)
    4:7     log-scales
    7:11    rotation quaternion (w, x, y, z), unnormalized
    11      opacity (pre-sigmoid)
    12:24   degree-1 SH coefficients, 3 channels x 4, channel-major
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import adcore as ad
from .adcore import Array

N_PARAMS = 24
DEPTH = 0
OFFSET = slice(1, 4)
SCALE = slice(4, 7)
QUAT = slice(7, 11)
OPACITY = 11
SH = slice(12, 24)

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199


@dataclass(frozen=True)
class ActivationConfig:
    d_near: float = 0.5
    d_far: float = 3.0
    scene_extent: float = 1.0
    scale_min: float = 1e-6

    @property
    def scale_max(self) -> float:
        return 0.5 * self.scene_extent


@dataclass
class PhysicalGaussians:
    means: Array  # [N,3]
    covs: Array  # [N,3,3]
    opacities: Array  # [N]
    sh: Array  # [N,3,4]

    def __len__(self) -> int:
        return self.means.shape[0]

    def transformed(self, rotation: np.ndarray, translation: np.ndarray) -> "PhysicalGaussians":
        """Apply x -> R x + t (e.g. camera frame -> world frame)."""
        dt = self.means.dtype
        rot = Array(np.asarray(rotation, dtype=dt))
        rot_t = Array(np.ascontiguousarray(np.asarray(rotation, dtype=dt).T))
        means = ad.matmul(self.means, rot_t) + Array(np.asarray(translation, dtype=dt))
        covs = ad.matmul(ad.matmul(rot, self.covs), rot_t)
        return PhysicalGaussians(means, covs, self.opacities, self.sh)

    def to_world(self, cam) -> "PhysicalGaussians":
        return self.transformed(cam.rotation, cam.translation)

    def take(self, idx: np.ndarray) -> "PhysicalGaussians":
        return PhysicalGaussians(ad.take(self.means, idx), ad.take(self.covs, idx),
                                 ad.take(self.opacities, idx), ad.take(self.sh, idx))

    def numpy(self) -> dict[str, np.ndarray]:
        return {"means": self.means.data, "covs": self.covs.data,
                "opacities": self.opacities.data, "sh": self.sh.data}

    @classmethod
    def from_numpy(cls, means, covs, opacities, sh, requires_grad: bool = False) -> "PhysicalGaussians":
        mk = lambda a: Array(np.array(a, dtype=ad.get_default_dtype()), requires_grad=requires_grad)  # noqa: E731
        return cls(mk(means), mk(covs), mk(opacities), mk(np.reshape(sh, (-1, 3, 4))))


# ----------------------------------------------------------------------
# quaternions
# ----------------------------------------------------------------------

def quat_multiply(a: Array, b: Array) -> Array:
    """Hamilton product a * b for [N,4] (w, x, y, z)."""
    aw, ax, ay, az = (a[:, i] for i in range(4))
    bw, bx, by, bz = (b[:, i] for i in range(4))
    return ad.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=1)


def quat_normalize(q: Array) -> Array:
    norm = ad.sqrt((q * q).sum(axis=1, keepdims=True))
    if (norm.data < 1e-12).any():
        raise ValueError("zero-norm quaternion")
    return q / norm


def quat_to_rotmat(q: Array) -> Array:
    """Unit quaternions [N,4] -> rotation matrices [N,3,3]."""
    w, x, y, z = (q[:, i] for i in range(4))
    rows = [
        ad.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=1),
        ad.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=1),
        ad.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=1),
    ]
    return ad.stack(rows, axis=1)


def quat_to_rotmat_np(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = np.moveaxis(q, -1, 0)
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ], -2)


def covariance_np(scales: np.ndarray, quats: np.ndarray) -> np.ndarray:
    m = quat_to_rotmat_np(quats) * np.asarray(scales)[..., None, :]
    return m @ np.swapaxes(m, -1, -2)


# ----------------------------------------------------------------------
# activation / update
# ----------------------------------------------------------------------

def grid_rays(n: int, cam) -> np.ndarray:
    """Fixed sqrt(n) x sqrt(n) grid of (x/z, y/z) tangents over the image plane."""
    g = int(round(np.sqrt(n)))
    if g * g != n:
        raise ValueError(f"query count {n} is not a perfect square")
    xs = (np.arange(g) + 0.5) * cam.width / g - 0.5
    ys = (np.arange(g) + 0.5) * cam.height / g - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([(xx.ravel() - cam.cx) / cam.fx, (yy.ravel() - cam.cy) / cam.fy], axis=1)


def depth_from_raw(raw_depth: Array, cfg: ActivationConfig) -> Array:
    return cfg.d_near + (cfg.d_far - cfg.d_near) * ad.sigmoid(raw_depth)


def activate(raw: Array, rays: np.ndarray, cfg: ActivationConfig = ActivationConfig()) -> PhysicalGaussians:
    """Raw [N,24] -> physical Gaussians in the frame of the camera the rays belong to."""
    if raw.ndim != 2 or raw.shape[1] != N_PARAMS:
        raise ValueError(f"raw Gaussians must be [N,{N_PARAMS}], got {raw.shape}")
    if rays.shape != (raw.shape[0], 2):
        raise ValueError(f"rays must be [N,2], got {rays.shape}")
    u = Array(rays.astype(raw.dtype))
    d = depth_from_raw(raw[:, DEPTH], cfg)
    off = raw[:, OFFSET]
    means = ad.stack([u[:, 0] * d + off[:, 0], u[:, 1] * d + off[:, 1], d + off[:, 2]], axis=1)

    scales = ad.clamp(ad.exp(raw[:, SCALE]), cfg.scale_min, cfg.scale_max)
    rot = quat_to_rotmat(quat_normalize(raw[:, QUAT]))
    m = rot * ad.reshape(scales, (-1, 1, 3))
    covs = ad.matmul(m, ad.transpose(m, (0, 2, 1)))

    opac = ad.sigmoid(raw[:, OPACITY])
    sh = ad.reshape(raw[:, SH], (-1, 3, 4))
    return PhysicalGaussians(means, covs, opac, sh)


def compose_update(g: Array, delta: Array) -> Array:
    """G (+) dG: Hamilton-compose rotations (normalized dG on the left), add the rest."""
    if g.shape != delta.shape:
        raise ValueError(f"shape mismatch {g.shape} vs {delta.shape}")
    q = quat_multiply(quat_normalize(delta[:, QUAT]), g[:, QUAT])
    return ad.concat([g[:, :7] + delta[:, :7], q, g[:, 11:] + delta[:, 11:]], axis=1)


def sh_color_raw(sh: Array, dirs) -> Array:
    """Pre-sigmoid SH evaluation; ``dirs`` [N,3] unit vectors (Array or ndarray)."""
    dirs = ad.as_array(dirs, sh.dtype)
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    basis = ad.stack([ad.mul(x, 0.0) + SH_C0, y * SH_C1, z * SH_C1, x * SH_C1], axis=1)
    return (sh * ad.reshape(basis, (-1, 1, 4))).sum(axis=2)


def sh_color(sh: Array, dirs) -> Array:
    """Per-Gaussian RGB in (0,1) for unit view directions [N,3]."""
    return ad.sigmoid(sh_color_raw(sh, dirs))


# ----------------------------------------------------------------------
# export
# ----------------------------------------------------------------------

def write_ply(path: str | Path, means: np.ndarray, opacities: np.ndarray) -> None:
    """Binary little-endian point cloud of Gaussian centers with opacity."""
    means = np.asarray(means, dtype="<f4").reshape(-1, 3)
    opac = np.asarray(opacities, dtype="<f4").reshape(-1, 1)
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {len(means)}\n"
        "property float x\nproperty float y\nproperty float z\nproperty float opacity\n"
        "end_header\n"
    )
    body = np.concatenate([means, opac], axis=1).astype("<f4").tobytes()
    Path(path).write_bytes(header.encode("ascii") + body)


def read_ply(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    end = raw.index(b"end_header\n") + len(b"end_header\n")
    n = None
    for line in raw[:end].decode("ascii").splitlines():
        if line.startswith("element vertex"):
            n = int(line.split()[-1])
    if n is None:
        raise ValueError(f"{path}: no vertex element")
    rec = struct.calcsize("<4f")
    return np.frombuffer(raw[end:end + n * rec], dtype="<f4").reshape(n, 4)
