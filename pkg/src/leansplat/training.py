"""Loss assembly, Adam, the training loop and the binary checkpoint format."""

from __future__ import annotations

import csv
import json
import struct
import time
import zlib
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import adcore as ad
from .adcore import Array, NonFiniteError
from .camera import Camera
from .decoder import DecoderConfig, LeanGaussian, ModelConfig
from .features import FeatureConfig
from .gaussians import ActivationConfig
from .metrics import psnr, ssim
from .render import DEFAULT_SETTINGS, RenderSettings, render

MAGIC = b"LGS1"
CKPT_VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4"), 2: np.dtype("<i8")}
_DTYPE_CODES = {v: k for k, v in _DTYPES.items()}


class NumericError(FloatingPointError):
    """Training hit a non-finite value; see the attached dump path."""

    def __init__(self, msg: str, dump_path: Path | None = None):
        super().__init__(msg if dump_path is None else f"{msg} (arrays dumped to {dump_path})")
        self.dump_path = dump_path


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    # loss
    lambda_e: float = 1.0
    lambda_d: float = 1.0
    lambda_perc: float = 0.5
    # comma-separated per-layer multipliers on the layer terms; empty = all ones
    layer_weights: str = ""
    # iteration at which the perceptual term switches on; -1 = 80% of iters
    perc_start: int = -1
    # optimization
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    iters: int = 1000
    batch_size: int = 4
    seed: int = 0
    precision: str = "f64"
    input_view: int = 0
    # views [0, n_train) supervise; the rest are held out
    n_train_views: int = 0
    # model
    n_queries: int = 256
    hidden: int = 128
    layers: int = 2
    n_points: int = 4
    heads: int = 4
    ffn_mult: int = 4
    refs: str = "reproject"
    channels: int = 64
    unet_base: int = 32
    patch_scale: int = 14
    use_unet: bool = True
    d_near: float = 0.5
    d_far: float = 3.0
    scene_extent: float = 1.0
    # bookkeeping
    log_every: int = 1
    ckpt_every: int = 0

    def __post_init__(self):
        for k in ("lambda_e", "lambda_d", "lambda_perc", "lr"):
            if getattr(self, k) < 0:
                raise ValueError(f"{k} must be >= 0")
        if self.perc_start > self.iters:
            raise ValueError("perc_start must not exceed iters")
        if self.precision not in ("f64", "f32"):
            raise ValueError("precision must be f64 or f32")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if len(self.layer_weight_list()) != self.layers:
            raise ValueError(f"layer_weights needs {self.layers} entries")

    @property
    def perc_start_iter(self) -> int:
        return int(0.8 * self.iters) if self.perc_start < 0 else self.perc_start

    @property
    def dtype(self):
        return np.float64 if self.precision == "f64" else np.float32

    def layer_weight_list(self) -> list[float]:
        if not self.layer_weights.strip():
            return [1.0] * self.layers
        return [float(t) for t in self.layer_weights.replace(";", ",").split(",") if t.strip()]

    def model_config(self, input_cam: Camera) -> ModelConfig:
        return ModelConfig(
            decoder=DecoderConfig(self.n_queries, self.hidden, self.layers, self.n_points, self.heads,
                                  self.ffn_mult, self.refs),
            features=FeatureConfig(self.channels, self.unet_base, self.patch_scale, self.use_unet),
            activation=ActivationConfig(self.d_near, self.d_far, self.scene_extent),
            intrinsics=(input_cam.fx, input_cam.fy, input_cam.cx, input_cam.cy, input_cam.width, input_cam.height),
            seed=self.seed,
        )

    # -- flat key=value files ---------------------------------------------
    @classmethod
    def valid_keys(cls) -> list[str]:
        return sorted(f.name for f in fields(cls))

    @classmethod
    def from_mapping(cls, values: dict, source: str = "<config>") -> "TrainConfig":
        unknown = sorted(set(values) - set(cls.valid_keys()))
        if unknown:
            raise KeyError(f"{source}: unknown config key(s) {unknown}; valid keys: {cls.valid_keys()}")
        base = cls()
        kwargs = {}
        for k, v in values.items():
            kind = type(getattr(base, k))
            if isinstance(v, str) and kind is bool:
                kwargs[k] = v.strip().lower() in ("1", "true", "yes", "on")
            else:
                kwargs[k] = kind(v)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> "TrainConfig":
        from .data import parse_kv

        vals = parse_kv(Path(path).read_text(), str(path))
        vals.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_mapping(vals, str(path))

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())


# ----------------------------------------------------------------------
# loss
# ----------------------------------------------------------------------

def mse(a: Array, b) -> Array:
    d = a - ad.as_array(b, a.dtype)
    return ad.mean(d * d)


def loss(renders_d: Sequence[Array], render_e: Array | None, target, cfg: TrainConfig,
         iteration: int = 0, target_e=None) -> Array:
    """Weighted sum of the first-stage term and the per-layer render terms.

    ``target_e`` is what ``render_e`` is compared with (defaults to ``target``).
    """
    target = ad.as_array(target)
    target_e = target if target_e is None else ad.as_array(target_e)
    for r in renders_d:
        if r.shape != target.shape:
            raise ValueError(f"render shape {r.shape} != target shape {target.shape}")
    weights = cfg.layer_weight_list()
    if len(renders_d) != len(weights):
        raise ValueError(f"got {len(renders_d)} layer renders for {len(weights)} layers")
    perc_on = cfg.lambda_perc > 0 and iteration >= cfg.perc_start_iter
    total = Array(np.zeros((), dtype=target.dtype))
    if render_e is not None and cfg.lambda_e > 0:
        if render_e.shape != target_e.shape:
            raise ValueError(f"first-stage render shape {render_e.shape} != {target_e.shape}")
        total = total + cfg.lambda_e * mse(render_e, target_e)
    for w, r in zip(weights, renders_d):
        if w == 0:
            continue
        term = cfg.lambda_d * mse(r, target)
        if perc_on:
            term = term + cfg.lambda_perc * (1.0 - ssim(r, target))
        total = total + w * term
    return total


# ----------------------------------------------------------------------
# optimizer
# ----------------------------------------------------------------------

class Adam:
    def __init__(self, named_params: Sequence[tuple[str, Array]], lr: float = 1e-5, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.named = list(named_params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in self.named}
        self.v = {k: np.zeros_like(p.data) for k, p in self.named}
        self.t = 0

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, p in self.named:
            g = p.grad
            if g is None:
                continue
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if self.lr == 0.0:
                continue
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for _, p in self.named:
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {f"adam.m.{k}": v for k, v in self.m.items()}
        out.update({f"adam.v.{k}": v for k, v in self.v.items()})
        out["adam.t"] = np.array([self.t], dtype=np.int64)
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k in self.m:
            self.m[k][...] = state[f"adam.m.{k}"]
            self.v[k][...] = state[f"adam.v.{k}"]
        self.t = int(state["adam.t"][0])


# ----------------------------------------------------------------------
# training step
# ----------------------------------------------------------------------

@dataclass
class TrainBatch:
    image: np.ndarray  # input image [3,H,W]
    cam: Camera  # input camera
    targets: list  # [(image, Camera)] supervision views


def render_layers(model: LeanGaussian, raws: Sequence[Array], input_cam: Camera, cam: Camera,
                  settings: RenderSettings = DEFAULT_SETTINGS) -> list[Array]:
    return [render(model.physical(g, input_cam), cam, settings).rgb for g in raws]


def _dump(arrays: dict, where: Path | None, tag: str) -> Path:
    import tempfile

    where = Path(where) if where is not None else Path(tempfile.mkdtemp(prefix="leansplat_dump_"))
    where.mkdir(parents=True, exist_ok=True)
    path = where / f"nonfinite_{tag}.npz"
    np.savez(path, **{k: np.asarray(v) for k, v in arrays.items()})
    return path


def train_step(batch: TrainBatch, model: LeanGaussian, opt: Adam, cfg: TrainConfig, iteration: int = 0,
               dump_dir: Path | None = None) -> tuple[float, float]:
    """One forward/backward/update. Returns (loss, mean final-layer PSNR on the batch)."""
    dt = cfg.dtype
    opt.zero_grad()
    raws = []
    try:
        with ad.Tape() as tape:
            raws = model(Array(batch.image, dtype=dt), batch.cam)
            render_e = render(model.physical(raws[0], batch.cam), batch.cam).rgb
            total = Array(np.zeros((), dtype=dt))
            finals = []
            for img, cam in batch.targets:
                layer_imgs = render_layers(model, raws[1:], batch.cam, cam)
                total = total + loss(layer_imgs, render_e, Array(img, dtype=dt), cfg, iteration,
                                     target_e=Array(batch.image, dtype=dt))
                finals.append(layer_imgs[-1].data if layer_imgs else render_e.data)
            total = total * (1.0 / len(batch.targets))
            value = float(total.item())
            if not np.isfinite(value):
                raise NonFiniteError(f"loss is {value}")
            tape.backward(total)
    except NonFiniteError as exc:
        arrays = {f"G{l}": g.data for l, g in enumerate(raws)}
        arrays.update({f"param.{k}": p.data for k, p in model.named_parameters()})
        path = _dump(arrays, dump_dir, f"iter{iteration}")
        raise NumericError(f"non-finite value at iteration {iteration}: {exc}", path) from exc
    for k, p in model.named_parameters():
        if p.grad is not None and not np.isfinite(p.grad).all():
            path = _dump({k: p.grad}, dump_dir, f"iter{iteration}_grad")
            raise NumericError(f"non-finite gradient in {k} at iteration {iteration}", path)
    opt.step()
    p_train = float(np.mean([psnr(np.clip(f, 0, 1), img) for f, (img, _) in zip(finals, batch.targets)]))
    return value, p_train


# ----------------------------------------------------------------------
# trainer
# ----------------------------------------------------------------------

class Trainer:
    """Single-object (or multi-object) training loop with deterministic batching.

    The batch for iteration ``it`` depends only on ``(seed, it)``, so a resumed
    run draws exactly the batches an unbroken run would.
    """

    def __init__(self, cfg: TrainConfig, objects: Sequence, model: LeanGaussian | None = None,
                 train_indices: Sequence[int] | None = None):
        if not objects:
            raise ValueError("no training objects")
        self.cfg = cfg
        self.objects = list(objects)
        ad.set_default_dtype(cfg.dtype)
        first = self.objects[0]
        self.model = model or LeanGaussian(cfg.model_config(first.cameras[cfg.input_view]))
        self.opt = Adam(self.model.named_parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
        self.iteration = 0
        self.log: list[dict] = []
        self.train_indices = None if train_indices is None else sorted(int(i) for i in train_indices)

    def train_views(self, obj) -> list[int]:
        if self.train_indices is not None:
            return list(self.train_indices)
        n = self.cfg.n_train_views or len(obj)
        return list(range(min(n, len(obj))))

    def make_batch(self, it: int) -> TrainBatch:
        rng = np.random.default_rng([self.cfg.seed, it])
        obj = self.objects[int(rng.integers(len(self.objects)))]
        pool = self.train_views(obj)
        k = min(self.cfg.batch_size, len(pool))
        pick = sorted(rng.choice(pool, size=k, replace=False).tolist())
        iv = self.cfg.input_view
        return TrainBatch(obj.images[iv], obj.cameras[iv], [(obj.images[i], obj.cameras[i]) for i in pick])

    def step(self, dump_dir: Path | None = None) -> dict:
        t0 = time.perf_counter()
        value, p_train = train_step(self.make_batch(self.iteration), self.model, self.opt, self.cfg,
                                    self.iteration, dump_dir)
        row = {"iter": self.iteration, "loss": value, "psnr_train": p_train,
               "wall_ms": 1000.0 * (time.perf_counter() - t0)}
        self.iteration += 1
        self.log.append(row)
        return row

    def run(self, n: int | None = None, *, log_path: Path | None = None, ckpt_dir: Path | None = None,
            callback=None) -> list[dict]:
        n = self.cfg.iters - self.iteration if n is None else n
        rows = []
        for _ in range(n):
            row = self.step(ckpt_dir)
            rows.append(row)
            if log_path is not None and (row["iter"] % self.cfg.log_every == 0):
                append_log(log_path, row)
            if ckpt_dir is not None and self.cfg.ckpt_every and self.iteration % self.cfg.ckpt_every == 0:
                self.save(Path(ckpt_dir) / f"ckpt_{self.iteration:06d}.lgs")
            if callback is not None:
                callback(self, row)
        return rows

    def predict(self, image: np.ndarray, cam: Camera, layer: int = -1):
        with ad.no_grad():
            raws = self.model(Array(image, dtype=self.cfg.dtype), cam)
            return self.model.physical(raws[layer], cam)

    # -- persistence ----------------------------------------------------
    def save(self, path: str | Path) -> None:
        tensors = {f"model.{k}": v for k, v in self.model.state_dict().items()}
        tensors.update(self.opt.state_dict())
        tensors["model_rays"] = self.model.rays
        meta = {"config": asdict(self.cfg), "iteration": self.iteration, "train_indices": self.train_indices,
                "model": model_config_to_dict(self.model.config)}
        save_checkpoint(path, tensors, meta)

    @classmethod
    def load(cls, path: str | Path, objects: Sequence | None = None) -> "Trainer":
        tensors, meta = load_checkpoint(path)
        cfg = TrainConfig.from_mapping(meta["config"], str(path))
        ad.set_default_dtype(cfg.dtype)
        model = LeanGaussian(model_config_from_dict(meta["model"]))
        state = {k[len("model."):]: v for k, v in tensors.items() if k.startswith("model.")}
        try:
            model.load_state_dict(state)
        except (KeyError, ValueError) as exc:
            raise CheckpointError(f"{path}: {exc}") from exc
        model.rays = tensors["model_rays"]
        trainer = cls.__new__(cls)
        trainer.cfg = cfg
        trainer.objects = list(objects or [])
        trainer.model = model
        trainer.opt = Adam(model.named_parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
        try:
            trainer.opt.load_state_dict(tensors)
        except KeyError as exc:
            raise CheckpointError(f"{path}: missing optimizer field {exc}") from exc
        trainer.iteration = int(meta["iteration"])
        trainer.log = []
        trainer.train_indices = meta.get("train_indices")
        return trainer


def model_config_to_dict(mc: ModelConfig) -> dict:
    return {"decoder": asdict(mc.decoder), "features": asdict(mc.features),
            "activation": asdict(mc.activation), "intrinsics": list(mc.intrinsics), "seed": mc.seed}


def model_config_from_dict(d: dict) -> ModelConfig:
    return ModelConfig(DecoderConfig(**d["decoder"]), FeatureConfig(**d["features"]),
                       ActivationConfig(**d["activation"]), tuple(d["intrinsics"]), int(d["seed"]))


LOG_FIELDS = ("iter", "loss", "psnr_train", "wall_ms")


def append_log(path: str | Path, row: dict) -> None:
    path = Path(path)
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        if new:
            wr.writeheader()
        wr.writerow({k: row[k] for k in LOG_FIELDS})


# ----------------------------------------------------------------------
# checkpoint file
# ----------------------------------------------------------------------

def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    """Magic, version, JSON metadata, named little-endian tensors, trailing CRC32."""
    parts = [MAGIC, struct.pack("<I", CKPT_VERSION)]
    js = json.dumps(meta, sort_keys=True).encode()
    parts += [struct.pack("<I", len(js)), js, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        dt = arr.dtype.newbyteorder("<")
        if dt not in _DTYPE_CODES:
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        nb = name.encode()
        parts += [struct.pack("<H", len(nb)), nb, struct.pack("<BB", _DTYPE_CODES[dt], arr.ndim)]
        parts += [struct.pack("<Q", d) for d in arr.shape]
        raw = np.ascontiguousarray(arr, dtype=dt).tobytes()
        parts += [struct.pack("<Q", len(raw)), raw]
    body = b"".join(parts)
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(body + struct.pack("<I", zlib.crc32(body)))
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read ({exc})") from exc
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    body, crc = blob[:-4], struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupt or truncated")
    (version,) = struct.unpack_from("<I", body, 4)
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: version {version} unsupported (expected {CKPT_VERSION})")
    pos = 8
    try:
        (n,) = struct.unpack_from("<I", body, pos)
        meta = json.loads(body[pos + 4:pos + 4 + n])
        pos += 4 + n
        (count,) = struct.unpack_from("<I", body, pos)
        pos += 4
        tensors = {}
        for _ in range(count):
            (ln,) = struct.unpack_from("<H", body, pos)
            name = body[pos + 2:pos + 2 + ln].decode()
            pos += 2 + ln
            code, ndim = struct.unpack_from("<BB", body, pos)
            pos += 2
            shape = struct.unpack_from("<" + "Q" * ndim, body, pos)
            pos += 8 * ndim
            (nbytes,) = struct.unpack_from("<Q", body, pos)
            pos += 8
            arr = np.frombuffer(body, dtype=_DTYPES[code], count=nbytes // _DTYPES[code].itemsize, offset=pos)
            tensors[name] = arr.reshape(shape).copy()
            pos += nbytes
    except (struct.error, KeyError, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from exc
    if pos != len(body):
        raise CheckpointError(f"{path}: {len(body) - pos} trailing bytes")
    for key in ("config", "iteration", "model"):
        if key not in meta:
            raise CheckpointError(f"{path}: metadata lacks '{key}'")
    return tensors, meta


def overfit_config(**overrides) -> TrainConfig:
    """The canonical single-scene overfit setup."""
    base = TrainConfig(n_queries=256, hidden=128, layers=2, n_points=4, lr=1e-4, iters=5000,
                       batch_size=4, n_train_views=20)
    return replace(base, **overrides)
