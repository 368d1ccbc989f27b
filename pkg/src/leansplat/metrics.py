"""PSNR, windowed SSIM (differentiable) and per-object evaluation reports."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import adcore as ad
from .adcore import Array
from .camera import Camera

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
FAR_VIEW_DEG = 45.0


def _check_shapes(a, b) -> None:
    sa, sb = np.shape(getattr(a, "data", a)), np.shape(getattr(b, "data", b))
    if sa != sb:
        raise ValueError(f"shape mismatch {sa} vs {sb}")


def psnr(a, b) -> float:
    """10 log10(1 / MSE) for images in [0,1]; ``inf`` when identical."""
    _check_shapes(a, b)
    a = np.asarray(getattr(a, "data", a), dtype=np.float64)
    b = np.asarray(getattr(b, "data", b), dtype=np.float64)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


def _filter_matrix(n: int, window: np.ndarray) -> np.ndarray:
    """Valid-mode 1-D correlation with ``window`` as an [n-k+1, n] matrix."""
    k = len(window)
    if n < k:
        raise ValueError(f"image side {n} smaller than the {k}-tap SSIM window")
    m = np.zeros((n - k + 1, n))
    for i in range(n - k + 1):
        m[i, i:i + k] = window
    return m


def ssim(a, b, *, window: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA, data_range: float = 1.0) -> Array:
    """Mean SSIM over channels and valid window positions of [C,H,W] images.

    Differentiable in both arguments; returns a scalar Array.
    """
    a, b = ad.as_array(a), ad.as_array(b)
    _check_shapes(a, b)
    if a.ndim == 2:
        a, b = ad.reshape(a, (1,) + a.shape), ad.reshape(b, (1,) + b.shape)
    _, h, w = a.shape
    g = gaussian_window(window, sigma)
    mh = Array(_filter_matrix(h, g).astype(a.dtype))
    mw_t = Array(np.ascontiguousarray(_filter_matrix(w, g).T).astype(a.dtype))

    def blur(x):
        return ad.matmul(ad.matmul(mh, x), mw_t)

    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a, mu_b = blur(a), blur(b)
    mu_aa, mu_bb, mu_ab = mu_a * mu_a, mu_b * mu_b, mu_a * mu_b
    var_a = blur(a * a) - mu_aa
    var_b = blur(b * b) - mu_bb
    cov = blur(a * b) - mu_ab
    num = (2.0 * mu_ab + c1) * (2.0 * cov + c2)
    den = (mu_aa + mu_bb + c1) * (var_a + var_b + c2)
    return ad.mean(num / den)


def ssim_value(a, b) -> float:
    with ad.no_grad():
        return float(ssim(a, b).item())


# ----------------------------------------------------------------------
# view selection
# ----------------------------------------------------------------------

def view_angles(cam: Camera) -> tuple[float, float]:
    """Azimuth and elevation (degrees) of the camera center about the origin, z up."""
    c = cam.center
    az = np.degrees(np.arctan2(c[1], c[0]))
    el = np.degrees(np.arctan2(c[2], np.hypot(c[0], c[1])))
    return float(az), float(el)


def far_views(cams: Sequence[Camera], input_index: int, threshold: float = FAR_VIEW_DEG) -> list[int]:
    """Views whose azimuth or elevation differs from the input view by more than ``threshold``."""
    az0, el0 = view_angles(cams[input_index])
    out = []
    for i, cam in enumerate(cams):
        if i == input_index:
            continue
        az, el = view_angles(cam)
        d_az = abs((az - az0 + 180.0) % 360.0 - 180.0)
        if d_az > threshold or abs(el - el0) > threshold:
            out.append(i)
    return out


# ----------------------------------------------------------------------
# evaluation
# ----------------------------------------------------------------------

def _predictor(model) -> Callable:
    return model.predict if hasattr(model, "predict") else model


def _finite_mean(values: list[float]) -> float:
    if not values:
        return float("nan")
    return float(np.mean(values))


def eval_object(model, views: Sequence[tuple[np.ndarray, Camera]], input_index: int = 0, *,
                render_fn=None, exclude: Sequence[int] = (), report_dir: str | Path | None = None,
                name: str = "object") -> dict:
    """Reconstruct from ``views[input_index]`` and score every other view.

    ``model`` is either an object with ``predict(image, cam)`` or a callable with
    that signature; both return world-frame PhysicalGaussians.
    """
    from .render import render

    if len(views) < 2:
        raise ValueError("need at least two views to evaluate")
    render_fn = render_fn or render
    img0, cam0 = views[input_index]
    with ad.no_grad():
        g = _predictor(model)(img0, cam0)
        rows = []
        for i, (img, cam) in enumerate(views):
            pred = render_fn(g, cam).rgb.data
            rows.append({"view": i, "psnr": psnr(pred, img), "ssim": ssim_value(pred, img),
                         "is_input": int(i == input_index)})

    far = set(far_views([c for _, c in views], input_index))
    skip = set(exclude) | {input_index}
    kept = [r for r in rows if r["view"] not in skip]
    far_rows = [r for r in kept if r["view"] in far]
    summary = {
        "psnr_mean": _finite_mean([r["psnr"] for r in kept]),
        "ssim_mean": _finite_mean([r["ssim"] for r in kept]),
        "psnr_far": _finite_mean([r["psnr"] for r in far_rows]),
        "ssim_far": _finite_mean([r["ssim"] for r in far_rows]),
        "psnr_input": rows[input_index]["psnr"],
        "lpips": "n/a",
        "n_views": len(kept),
        "n_far": len(far_rows),
    }
    if report_dir is not None:
        write_report(report_dir, name, rows, summary)
    return {"per_view": rows, "summary": summary}


def write_report(report_dir: str | Path, name: str, rows: list[dict], summary: dict) -> None:
    out = Path(report_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"{name}_views.csv", "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=["view", "psnr", "ssim", "is_input"])
        wr.writeheader()
        wr.writerows(rows)
    # JSON has no infinity; keep the sentinel readable
    clean = {k: (str(v) if isinstance(v, float) and not np.isfinite(v) else v) for k, v in summary.items()}
    (out / f"{name}_summary.json").write_text(json.dumps(clean, indent=2) + "\n")
