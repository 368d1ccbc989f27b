"""Pinhole camera (OpenCV axes: x right, y down, z forward).

Pixel ``(row i, col j)`` has its center at continuous coordinates
``(x=j, y=i)``; the principal point is expressed in the same frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import adcore as ad
from .adcore import Array

Z_EPS = 1e-4


class CameraError(ValueError):
    pass


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))  # world-from-camera
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))  # camera center in world

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        trans = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)
        if not (self.fx > 0 and self.fy > 0):
            raise CameraError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if np.abs(rot @ rot.T - np.eye(3)).max() > 1e-9:
            raise CameraError("rotation is not orthonormal")
        if self.width < 1 or self.height < 1:
            raise CameraError(f"bad image size {self.width}x{self.height}")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def center(self) -> np.ndarray:
        return self.translation

    @property
    def world_from_camera(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @classmethod
    def from_matrices(cls, K: np.ndarray, pose: np.ndarray, width: int, height: int) -> "Camera":
        pose = np.asarray(pose, dtype=np.float64)
        rot = pose[:3, :3]
        # text pose files carry ~1e-7 rounding; snap back onto SO(3)
        u, _, vt = np.linalg.svd(rot)
        rot = u @ vt
        return cls(float(K[0, 0]), float(K[1, 1]), float(K[0, 2]), float(K[1, 2]), int(width), int(height),
                   rot, pose[:3, 3])

    @classmethod
    def look_at(cls, eye, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0), *, fx: float, fy: float | None = None,
                width: int, height: int, cx: float | None = None, cy: float | None = None) -> "Camera":
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(right) < 1e-9:
            right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        rot = np.stack([right, down, forward], axis=1)
        return cls(fx, fy if fy is not None else fx,
                   (width - 1) / 2.0 if cx is None else cx,
                   (height - 1) / 2.0 if cy is None else cy,
                   width, height, rot, eye)

    def with_pose(self, rotation: np.ndarray, translation: np.ndarray) -> "Camera":
        return Camera(self.fx, self.fy, self.cx, self.cy, self.width, self.height, rotation, translation)

    # -- differentiable transforms ----------------------------------------
    def world_to_camera(self, points: Array) -> Array:
        """Row-vector points [N,3] in world frame -> camera frame."""
        rot = Array(self.rotation.astype(points.dtype))
        return ad.matmul(points - Array(self.translation.astype(points.dtype)), rot)

    def camera_to_world(self, points: Array) -> Array:
        rot_t = Array(np.ascontiguousarray(self.rotation.T).astype(points.dtype))
        return ad.matmul(points, rot_t) + Array(self.translation.astype(points.dtype))

    def project_camera_points(self, pts_cam: Array) -> tuple[Array, Array, np.ndarray]:
        """Camera-frame points -> (pixel xy [N,2], z [N], in-front mask)."""
        z = pts_cam[:, 2]
        valid = z.data > Z_EPS
        z_safe = ad.where(valid, z, 1.0)
        u = ad.where(valid, pts_cam[:, 0] / z_safe * self.fx, 0.0) + self.cx
        v = ad.where(valid, pts_cam[:, 1] / z_safe * self.fy, 0.0) + self.cy
        return ad.stack([u, v], axis=1), z, valid

    def project_centers(self, mu: Array) -> tuple[Array, Array, np.ndarray]:
        """World points -> (pixel xy, camera-frame z, in-front mask).

        Points with z <= Z_EPS are flagged; their pixel coordinates are
        placeholders and carry zero gradient.
        """
        return self.project_camera_points(self.world_to_camera(mu))

    def projection_jacobian(self, pts_cam: Array) -> Array:
        """d(pixel)/d(camera point), [N,2,3], for points in front of the camera."""
        x, y, z = pts_cam[:, 0], pts_cam[:, 1], pts_cam[:, 2]
        if (z.data <= Z_EPS).any():
            raise CameraError("projection_jacobian called on points behind the camera")
        inv_z = 1.0 / z
        zero = ad.mul(z, 0.0)
        row0 = ad.stack([inv_z * self.fx, zero, -self.fx * x * inv_z * inv_z], axis=1)
        row1 = ad.stack([zero, inv_z * self.fy, -self.fy * y * inv_z * inv_z], axis=1)
        return ad.stack([row0, row1], axis=1)

    # -- rays --------------------------------------------------------------
    def pixel_rays(self, xy: np.ndarray) -> np.ndarray:
        """Unit world directions through continuous pixel coords [...,2]."""
        xy = np.asarray(xy, dtype=np.float64)
        d_cam = np.stack([(xy[..., 0] - self.cx) / self.fx, (xy[..., 1] - self.cy) / self.fy,
                          np.ones(xy.shape[:-1])], axis=-1)
        d = d_cam @ self.rotation.T
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def pixel_ray(self, x: float, y: float) -> np.ndarray:
        return self.pixel_rays(np.array([x, y]))


def pixel_ray(cam: Camera, px) -> np.ndarray:
    """Unit world direction through pixel ``(row i, col j)``."""
    i, j = px
    if not (0 <= i < cam.height and 0 <= j < cam.width):
        raise CameraError(f"pixel {px} outside {cam.height}x{cam.width} image")
    return cam.pixel_ray(float(j), float(i))


# ----------------------------------------------------------------------
# text formats
# ----------------------------------------------------------------------

def read_pose(path: str | Path) -> np.ndarray:
    """4x4 world-from-camera matrix, 16 whitespace-separated numbers."""
    path = Path(path)
    try:
        vals = [float(t) for t in path.read_text().split()]
    except (OSError, ValueError) as exc:
        raise CameraError(f"{path}: cannot parse pose ({exc})") from exc
    if len(vals) != 16:
        raise CameraError(f"{path}: expected 16 numbers for a 4x4 pose, found {len(vals)}")
    m = np.array(vals).reshape(4, 4)
    rot = m[:3, :3]
    if np.abs(rot @ rot.T - np.eye(3)).max() > 1e-4:
        raise CameraError(f"{path}: rotation block is not orthonormal")
    return m


def write_pose(path: str | Path, pose: np.ndarray) -> None:
    rows = [" ".join(f"{v:.17g}" for v in row) for row in np.asarray(pose).reshape(4, 4)]
    Path(path).write_text("\n".join(rows) + "\n")


def read_intrinsics(path: str | Path) -> tuple[np.ndarray, int, int]:
    """Parse ``fx fy cx cy width height``; also accepts the original SRN layout
    (``f cx cy 0`` / origin / scale / ``height width``)."""
    path = Path(path)
    try:
        lines = [ln.split() for ln in path.read_text().splitlines() if ln.strip()]
        if len(lines) == 1 and len(lines[0]) == 6:
            fx, fy, cx, cy, w, h = (float(t) for t in lines[0])
        elif len(lines) >= 4 and len(lines[0]) == 4:
            f, cx, cy = (float(t) for t in lines[0][:3])
            fx = fy = f
            h, w = (float(t) for t in lines[3][:2])
        else:
            raise ValueError("unrecognized layout")
    except (OSError, ValueError) as exc:
        raise CameraError(f"{path}: cannot parse intrinsics ({exc})") from exc
    K = np.array([[fx, 0, cx], [0, fy, cy], [0, 0, 1.0]])
    return K, int(w), int(h)


def write_intrinsics(path: str | Path, cam: Camera) -> None:
    Path(path).write_text(f"{cam.fx:.17g} {cam.fy:.17g} {cam.cx:.17g} {cam.cy:.17g} {cam.width} {cam.height}\n")
