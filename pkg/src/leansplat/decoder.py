"""Deformable decoder whose N queries are N Gaussians.

Each layer: deformable cross-attention sampled around the projected Gaussian
centers, self-attention among queries, FFN, then a per-layer splat head emits
a raw-parameter increment composed onto the current Gaussians.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import adcore as ad
from .adcore import Array
from .camera import Camera
from .features import FeatureConfig, FeatureExtractor, FeatureMap
from .gaussians import (
    N_PARAMS,
    OPACITY,
    QUAT,
    SCALE,
    ActivationConfig,
    activate,
    compose_update,
    grid_rays,
)
from .nn import MLP, LayerNorm, Linear, Module, param

ATTN_CHUNK = 512


@dataclass(frozen=True)
class DecoderConfig:
    n_queries: int = 256
    hidden: int = 128
    layers: int = 2
    n_points: int = 4
    heads: int = 4
    ffn_mult: int = 4
    # "reproject": refs follow the current centers; "grid": frozen at the ray grid
    refs: str = "reproject"

    def __post_init__(self):
        g = int(round(np.sqrt(self.n_queries)))
        if g * g != self.n_queries:
            raise ValueError(f"n_queries={self.n_queries} must be a perfect square")
        if self.n_points < 1 or self.layers < 0:
            raise ValueError("need n_points >= 1 and layers >= 0")
        if self.hidden % self.heads:
            raise ValueError("hidden must be divisible by heads")
        if self.refs not in ("reproject", "grid"):
            raise ValueError(f"unknown refs mode {self.refs!r}")

    @property
    def grid(self) -> int:
        return int(round(np.sqrt(self.n_queries)))


@dataclass(frozen=True)
class ModelConfig:
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    activation: ActivationConfig = field(default_factory=ActivationConfig)
    # input-camera intrinsics the query rays are laid out for: fx, fy, cx, cy, width, height
    intrinsics: tuple = (100.0, 100.0, 31.5, 31.5, 64, 64)
    seed: int = 0

    def intrinsics_camera(self) -> Camera:
        fx, fy, cx, cy, w, h = self.intrinsics
        return Camera(fx, fy, cx, cy, int(w), int(h))


@dataclass
class DecoderState:
    q: Array  # [N,C]
    G: Array  # [N,24] raw
    refs: Array  # [N,2] feature-grid coords
    layer_index: int = 0


# ----------------------------------------------------------------------
# building blocks
# ----------------------------------------------------------------------

class SplatHead(Module):
    """Query -> 24 raw parameters; last layer starts at zero so output == bias."""

    def __init__(self, rng: np.random.Generator, hidden: int, bias: np.ndarray):
        self.mlp = MLP(rng, hidden, hidden, N_PARAMS, zero_last=True)
        self.mlp.fc2.bias.data[:] = bias

    def __call__(self, q: Array) -> Array:
        return self.mlp(q)


def identity_update_bias() -> np.ndarray:
    b = np.zeros(N_PARAMS)
    b[QUAT.start] = 1.0
    return b


def init_gaussian_bias(grid: int, act: ActivationConfig) -> np.ndarray:
    b = np.zeros(N_PARAMS)
    b[SCALE] = np.log(act.scene_extent / grid)
    b[QUAT.start] = 1.0
    b[OPACITY] = 0.0
    return b


class GaussianDFA(Module):
    """Deformable cross-attention sampled at reference points plus learned offsets."""

    def __init__(self, rng: np.random.Generator, hidden: int, feat_channels: int, n_points: int):
        self._n_points = n_points
        self.offsets = Linear(rng, hidden, 2 * n_points, zero=True)
        angles = 2 * np.pi * np.arange(n_points) / n_points
        ring = 0.5 * np.stack([np.cos(angles), np.sin(angles)], axis=1) if n_points > 1 else np.zeros((1, 2))
        self.offsets.bias.data[:] = ring.reshape(-1)
        self.weights = Linear(rng, hidden, n_points, zero=True)
        self.value = Linear(rng, feat_channels, hidden)
        self.norm = LayerNorm(hidden)

    def sample(self, q: Array, refs, fmap: FeatureMap) -> Array:
        """Attention-weighted mixture of sampled features, [N, C_feat]."""
        n, p = q.shape[0], self._n_points
        offs = ad.reshape(self.offsets(q), (n, p, 2))
        pts = offs + ad.reshape(ad.as_array(refs, q.dtype), (n, 1, 2))
        att = ad.softmax(self.weights(q), axis=1)  # [N,P]
        sampled = ad.bilinear_sample(fmap.data, ad.reshape(pts, (n * p, 2)))
        sampled = ad.reshape(sampled, (n, p, -1))
        return (sampled * ad.reshape(att, (n, p, 1))).sum(axis=1)

    def __call__(self, q: Array, refs, fmap: FeatureMap) -> Array:
        return self.norm(q + self.value(self.sample(q, refs, fmap)))


def _attention_nograd(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    out = np.empty_like(q)
    for s in range(0, q.shape[1], ATTN_CHUNK):
        sc = q[:, s:s + ATTN_CHUNK] @ np.swapaxes(k, -1, -2)
        sc -= sc.max(axis=-1, keepdims=True)
        np.exp(sc, out=sc)
        sc /= sc.sum(axis=-1, keepdims=True)
        out[:, s:s + ATTN_CHUNK] = sc @ v
    return out


class SelfAttention(Module):
    """Pre-norm multi-head self-attention with residual."""

    def __init__(self, rng: np.random.Generator, hidden: int, heads: int):
        self._heads = heads
        self.norm = LayerNorm(hidden)
        self.qkv = Linear(rng, hidden, 3 * hidden)
        self.proj = Linear(rng, hidden, hidden)

    def __call__(self, x: Array) -> Array:
        n, c = x.shape
        h, d = self._heads, c // self._heads
        qkv = ad.transpose(ad.reshape(self.qkv(self.norm(x)), (n, 3, h, d)), (1, 2, 0, 3))  # [3,h,N,d]
        q = qkv[0] * (1.0 / np.sqrt(d))
        k, v = qkv[1], qkv[2]
        if ad.current_tape() is None:
            ctx = Array(_attention_nograd(q.data, k.data, v.data))
        else:
            att = ad.softmax(ad.matmul(q, ad.transpose(k, (0, 2, 1))), axis=-1)
            ctx = ad.matmul(att, v)
        ctx = ad.reshape(ad.transpose(ctx, (1, 0, 2)), (n, c))
        return x + self.proj(ctx)


class FFN(Module):
    def __init__(self, rng: np.random.Generator, hidden: int, mult: int):
        self.norm = LayerNorm(hidden)
        self.mlp = MLP(rng, hidden, mult * hidden, hidden)

    def __call__(self, x: Array) -> Array:
        return x + self.mlp(self.norm(x))


class DecoderLayer(Module):
    def __init__(self, rng: np.random.Generator, cfg: DecoderConfig, feat_channels: int):
        self.dfa = GaussianDFA(rng, cfg.hidden, feat_channels, cfg.n_points)
        self.attn = SelfAttention(rng, cfg.hidden, cfg.heads)
        self.ffn = FFN(rng, cfg.hidden, cfg.ffn_mult)
        self.head = SplatHead(rng, cfg.hidden, identity_update_bias())

    def refine(self, q: Array, refs: Array, fmap: FeatureMap) -> Array:
        return self.ffn(self.attn(self.dfa(q, refs, fmap)))


# ----------------------------------------------------------------------
# full model
# ----------------------------------------------------------------------

class LeanGaussian(Module):
    """Image -> per-layer raw Gaussian sets expressed in the input camera frame."""

    def __init__(self, cfg: ModelConfig = ModelConfig()):
        rng = np.random.default_rng(cfg.seed)
        dc = cfg.decoder
        self._cfg = cfg
        self._rays = grid_rays(dc.n_queries, cfg.intrinsics_camera())
        self.features = FeatureExtractor(rng, cfg.features)
        self.queries = param(rng.normal(0.0, 0.02, size=(dc.n_queries, dc.hidden)))
        self.init_head = SplatHead(rng, dc.hidden, init_gaussian_bias(dc.grid, cfg.activation))
        self.layers = [DecoderLayer(rng, dc, cfg.features.channels) for _ in range(dc.layers)]

    @property
    def config(self) -> ModelConfig:
        return self._cfg

    @property
    def rays(self) -> np.ndarray:
        return self._rays

    @rays.setter
    def rays(self, value: np.ndarray) -> None:
        self._rays = np.asarray(value, dtype=np.float64)

    # -- pieces ------------------------------------------------------------
    def reference_points(self, G: Array, cam: Camera, fmap: FeatureMap) -> Array:
        """Project current centers through the input camera into feature-grid coords.

        Differentiable in ``G``; centers behind the camera are parked far off
        the grid so they sample zeros.
        """
        if self._cfg.decoder.refs == "grid":
            pix = np.stack([self._rays[:, 0] * cam.fx + cam.cx, self._rays[:, 1] * cam.fy + cam.cy], axis=1)
            return Array(fmap.pixel_to_grid(pix).astype(G.dtype))
        mu = activate(G, self._rays, self._cfg.activation).means
        pix, _, ok = cam.project_camera_points(mu)
        half = (fmap.scale - 1) / 2.0
        shift = Array(np.array([fmap.pad_left - half, fmap.pad_top - half], dtype=G.dtype))
        grid = (pix + shift) * (1.0 / fmap.scale)
        return ad.where(ok[:, None], grid, -1e6)

    def init_state(self, cam: Camera, fmap: FeatureMap) -> DecoderState:
        G = self.init_head(self.queries)
        return DecoderState(self.queries, G, self.reference_points(G, cam, fmap), 0)

    def decoder_layer(self, state: DecoderState, fmap: FeatureMap, cam: Camera) -> DecoderState:
        layer = self.layers[state.layer_index]
        q = layer.refine(state.q, state.refs, fmap)
        G = compose_update(state.G, layer.head(q))
        return DecoderState(q, G, self.reference_points(G, cam, fmap), state.layer_index + 1)

    # -- forward -----------------------------------------------------------
    def forward_states(self, img, cam: Camera) -> tuple[FeatureMap, list[DecoderState]]:
        fmap = self.features(ad.as_array(img))
        state = self.init_state(cam, fmap)
        states = [state]
        for _ in self.layers:
            state = self.decoder_layer(state, fmap, cam)
            states.append(state)
        return fmap, states

    def forward(self, img, cam: Camera) -> list[Array]:
        """[G_init, G_1, ..., G_L] raw Gaussians."""
        return [s.G for s in self.forward_states(img, cam)[1]]

    __call__ = forward

    def physical(self, raw: Array, cam: Camera):
        """Raw Gaussians -> world-frame physical Gaussians for input camera ``cam``."""
        return activate(raw, self._rays, self._cfg.activation).to_world(cam)
