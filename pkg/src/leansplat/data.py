"""Synthetic multi-view scenes built from known Gaussians, plus an SRN-layout loader."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .camera import Camera, CameraError, read_intrinsics, read_pose, write_intrinsics, write_pose
from .gaussians import SH_C0, PhysicalGaussians, covariance_np
from .render import load_png, render_oracle, save_png, to_uint8

RECIPES = ("sphere-shell", "box", "composite")
PALETTES = {
    "warm": ((0.85, 0.25, 0.15), (0.95, 0.65, 0.1), (0.6, 0.1, 0.3)),
    "cool": ((0.1, 0.35, 0.8), (0.1, 0.7, 0.6), (0.4, 0.2, 0.7)),
    "mixed": ((0.85, 0.2, 0.2), (0.2, 0.7, 0.25), (0.15, 0.3, 0.85), (0.9, 0.8, 0.1)),
}


class DataError(ValueError):
    """Malformed or missing dataset files."""


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    n_gaussians: int = 32
    recipe: str = "composite"
    palette: str = "mixed"
    n_views: int = 20
    radius: float = 2.0
    elev_min: float = -15.0
    elev_max: float = 45.0
    resolution: int = 64
    n_objects: int = 8
    # object extent (half-size of the shape the centers are drawn on)
    size: float = 0.45

    def __post_init__(self):
        if not 1 <= self.n_gaussians <= 128:
            raise ValueError(f"n_gaussians must be in [1, 128], got {self.n_gaussians}")
        if self.n_views < 2:
            raise ValueError("a rig needs at least 2 views")
        if self.recipe not in RECIPES:
            raise ValueError(f"unknown recipe {self.recipe!r}; choose from {RECIPES}")
        if self.palette not in PALETTES:
            raise ValueError(f"unknown palette {self.palette!r}; choose from {sorted(PALETTES)}")

    @property
    def focal(self) -> float:
        return 1.5625 * self.resolution


@dataclass
class ObjectViews:
    name: str
    images: list  # [3,H,W] float arrays in [0,1]
    cameras: list
    view_ids: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.images) != len(self.cameras):
            raise ValueError("every image needs exactly one camera")
        if not self.view_ids:
            self.view_ids = list(range(len(self.images)))

    def __len__(self) -> int:
        return len(self.images)

    @property
    def views(self) -> list[tuple[np.ndarray, Camera]]:
        return list(zip(self.images, self.cameras))


@dataclass
class Dataset:
    objects: list
    split: str = "train"


# ----------------------------------------------------------------------
# spec files
# ----------------------------------------------------------------------

def parse_kv(text: str, source: str = "<text>") -> dict[str, str]:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{n}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def coerce_fields(cls, values: dict[str, str], source: str = "<text>"):
    """Build dataclass ``cls`` from string values, rejecting unknown keys."""
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise KeyError(f"{source}: unknown key(s) {unknown}; valid keys: {sorted(known)}")
    kwargs = {}
    for k, v in values.items():
        default = getattr(cls(), k) if k in known else None
        if isinstance(default, bool):
            kwargs[k] = v.lower() in ("1", "true", "yes", "on")
        elif isinstance(default, int):
            kwargs[k] = int(v)
        elif isinstance(default, float):
            kwargs[k] = float(v)
        else:
            kwargs[k] = v
    return cls(**kwargs)


def read_scene_spec(path: str | Path, **overrides) -> SceneSpec:
    path = Path(path)
    spec = coerce_fields(SceneSpec, parse_kv(path.read_text(), str(path)), str(path))
    return replace(spec, **{k: v for k, v in overrides.items() if v is not None})


# ----------------------------------------------------------------------
# generation
# ----------------------------------------------------------------------

def _random_rotations(rng: np.random.Generator, n: int) -> np.ndarray:
    q = rng.normal(size=(n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def _shell_points(rng, n, r):
    d = rng.normal(size=(n, 3))
    return r * d / np.linalg.norm(d, axis=1, keepdims=True)


def _box_points(rng, n, half):
    p = rng.uniform(-half, half, size=(n, 3))
    # push each point onto its dominant face
    axis = np.argmax(np.abs(p), axis=1)
    p[np.arange(n), axis] = np.sign(p[np.arange(n), axis]) * half
    return p


def sample_centers(rng: np.random.Generator, spec: SceneSpec) -> np.ndarray:
    n, s = spec.n_gaussians, spec.size
    if spec.recipe == "sphere-shell":
        pts = _shell_points(rng, n, s)
    elif spec.recipe == "box":
        pts = _box_points(rng, n, 0.75 * s)
    else:
        k = n // 2
        a = _shell_points(rng, k, 0.6 * s) + np.array([0.0, 0.0, 0.35 * s])
        b = _box_points(rng, n - k, 0.5 * s) - np.array([0.0, 0.0, 0.45 * s])
        pts = np.concatenate([a, b])
    return pts - pts.mean(axis=0)


def sample_gaussians(spec: SceneSpec, rng: np.random.Generator | None = None) -> PhysicalGaussians:
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    n = spec.n_gaussians
    means = sample_centers(rng, spec)
    scales = rng.uniform(0.05, 0.14, size=(n, 3)) * (spec.size / 0.45)
    covs = covariance_np(scales, _random_rotations(rng, n))
    opac = rng.uniform(0.6, 0.95, size=n)
    palette = np.asarray(PALETTES[spec.palette])
    base = palette[rng.integers(len(palette), size=n)]
    base = np.clip(base + rng.normal(0.0, 0.05, size=base.shape), 0.05, 0.95)
    sh = np.zeros((n, 3, 4))
    sh[:, :, 0] = np.log(base / (1.0 - base)) / SH_C0
    sh[:, :, 1:] = rng.normal(0.0, 0.25, size=(n, 3, 3))
    return PhysicalGaussians.from_numpy(means, covs, opac, sh)


def make_rig(spec: SceneSpec, rng: np.random.Generator | None = None) -> list[Camera]:
    """Cameras on a sphere of ``spec.radius`` looking at the origin; view 0 at azimuth -90."""
    rng = rng if rng is not None else np.random.default_rng([spec.seed, 1])
    n = spec.n_views
    az = -90.0 + 360.0 * np.arange(n) / n + rng.uniform(-0.3, 0.3, size=n) * 360.0 / n
    az[0] = -90.0
    el = rng.uniform(spec.elev_min, spec.elev_max, size=n)
    el[0] = 0.5 * (spec.elev_min + spec.elev_max)
    cams = []
    for a, e in zip(np.radians(az), np.radians(el)):
        eye = spec.radius * np.array([np.cos(e) * np.cos(a), np.cos(e) * np.sin(a), np.sin(e)])
        cams.append(Camera.look_at(eye, (0.0, 0.0, 0.0), fx=spec.focal,
                                   width=spec.resolution, height=spec.resolution))
    return cams


def quantize(rgb: np.ndarray) -> np.ndarray:
    """Snap to the 8-bit grid used on disk, so exported files reload bit-exactly."""
    return np.moveaxis(to_uint8(rgb), -1, 0).astype(np.float64) / 255.0


def generate_scene(spec: SceneSpec, name: str | None = None) -> tuple[PhysicalGaussians, ObjectViews]:
    rng = np.random.default_rng([spec.seed, 0])
    g = sample_gaussians(spec, rng)
    cams = make_rig(spec, np.random.default_rng([spec.seed, 1]))
    images = [quantize(render_oracle(g, cam).rgb.data) for cam in cams]
    return g, ObjectViews(name or f"scene_{spec.seed:04d}", images, cams)


def generate_dataset(spec: SceneSpec) -> tuple[list[PhysicalGaussians], Dataset]:
    gts, objs = [], []
    for k in range(spec.n_objects):
        sub = replace(spec, seed=spec.seed * 1000 + k)
        g, obj = generate_scene(sub, name=f"obj_{k:03d}")
        gts.append(g)
        objs.append(obj)
    return gts, Dataset(objs)


# ----------------------------------------------------------------------
# SRN layout
# ----------------------------------------------------------------------

def save_gaussians(path: str | Path, g: PhysicalGaussians) -> None:
    with open(path, "wb") as fh:
        np.savez(fh, **g.numpy())


def load_gaussians(path: str | Path) -> PhysicalGaussians:
    with np.load(path) as z:
        return PhysicalGaussians.from_numpy(z["means"], z["covs"], z["opacities"], z["sh"])


def export_srn(root: str | Path, obj: ObjectViews, gt: PhysicalGaussians | None = None) -> Path:
    """Write one object as ``root/<name>/{rgb,pose}/NNNNNN.*`` plus ``intrinsics.txt``."""
    d = Path(root) / obj.name
    (d / "rgb").mkdir(parents=True, exist_ok=True)
    (d / "pose").mkdir(parents=True, exist_ok=True)
    write_intrinsics(d / "intrinsics.txt", obj.cameras[0])
    for vid, img, cam in zip(obj.view_ids, obj.images, obj.cameras):
        save_png(d / "rgb" / f"{vid:06d}.png", img)
        write_pose(d / "pose" / f"{vid:06d}.txt", cam.world_from_camera)
    if gt is not None:
        save_gaussians(d / "gaussians.npz", gt)
    return d


def _is_object_dir(d: Path) -> bool:
    return (d / "rgb").is_dir() and (d / "pose").is_dir()


def load_srn_object(d: str | Path) -> ObjectViews:
    d = Path(d)
    intr = d / "intrinsics.txt"
    if not intr.is_file():
        raise DataError(f"{intr}: missing intrinsics file")
    try:
        K, w0, h0 = read_intrinsics(intr)
    except CameraError as exc:
        raise DataError(str(exc)) from exc
    rgb_files = sorted((d / "rgb").glob("*.png"))
    if not rgb_files:
        raise DataError(f"{d / 'rgb'}: no PNG images")
    images, cams, ids = [], [], []
    size = None
    for f in rgb_files:
        pose_file = d / "pose" / (f.stem + ".txt")
        if not pose_file.is_file():
            raise DataError(f"{pose_file}: missing pose for image {f.name}")
        try:
            img = load_png(f)
        except OSError as exc:
            raise DataError(f"{f}: unreadable image ({exc})") from exc
        if size is None:
            size = img.shape[1:]
        elif img.shape[1:] != size:
            raise DataError(f"{f}: image size {img.shape[1:]} differs from {size}")
        try:
            pose = read_pose(pose_file)
        except CameraError as exc:
            raise DataError(str(exc)) from exc
        h, w = img.shape[1:]
        # intrinsics may be stated for a different resolution than the stored images
        sx, sy = w / w0, h / h0
        Ks = np.array([[K[0, 0] * sx, 0, (K[0, 2] + 0.5) * sx - 0.5],
                       [0, K[1, 1] * sy, (K[1, 2] + 0.5) * sy - 0.5], [0, 0, 1.0]]) if (sx, sy) != (1, 1) else K
        try:
            cams.append(Camera.from_matrices(Ks, pose, w, h))
        except CameraError as exc:
            raise DataError(f"{pose_file}: {exc}") from exc
        images.append(img)
        try:
            ids.append(int(f.stem))
        except ValueError as exc:
            raise DataError(f"{f}: file stem is not a view index") from exc
    return ObjectViews(d.name, images, cams, ids)


def load_srn(root: str | Path, split: str = "train") -> Dataset:
    """Load a directory of SRN-layout objects (or a single object directory)."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"{root}: not a directory")
    if _is_object_dir(root):
        return Dataset([load_srn_object(root)], split)
    dirs = sorted(p for p in root.iterdir() if p.is_dir() and _is_object_dir(p))
    if not dirs:
        raise DataError(f"{root}: no object folders with rgb/ and pose/")
    return Dataset([load_srn_object(p) for p in dirs], split)
