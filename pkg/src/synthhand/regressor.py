"""Direct image-to-joint-angle regressor: a one-hidden-layer MLP trained with SGD.

The network maps a grayscale, area-downsampled image to joint angles::

    hidden = tanh(W1 x + b1)
    angles = mid + half * tanh(W2 hidden + b2)

where ``mid``/``half`` are each joint's range midpoint and half-width, so
every prediction lies inside its joint range. The training loss is the mean
squared error over all (sample, joint) cells, in radians squared.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .codec import read_record
from .kinematics import JointSpace
from .pipeline import Dataset, load_dataset
from .renderer import Image

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1
CHECKPOINT_GLOB = "ckpt-*.json"


class NonFiniteError(FloatingPointError):
    def __init__(self, layer: str, step: int | None = None):
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"non-finite values in {layer} layer{where}")
        self.layer = layer
        self.step = step


def _area_weights(src: int, dst: int) -> np.ndarray:
    """(dst, src) matrix averaging source cells over each destination cell."""
    edges = np.arange(dst + 1) * (src / dst)
    lo = np.maximum(edges[:-1, None], np.arange(src)[None, :])
    hi = np.minimum(edges[1:, None], np.arange(1, src + 1)[None, :])
    w = np.clip(hi - lo, 0.0, None)
    return w / w.sum(axis=1, keepdims=True)


def extract_features(image: Image, down_w: int, down_h: int) -> np.ndarray:
    """Area-averaged luma downsample, flattened row-major, values in [0, 1]."""
    if down_w <= 0 or down_h <= 0:
        raise ValueError("target dimensions must be positive")
    px = image.pixels.astype(np.int64)
    luma = (299 * px[..., 0] + 587 * px[..., 1] + 114 * px[..., 2]) / 255000.0
    rows = _area_weights(image.height, down_h)
    cols = _area_weights(image.width, down_w)
    feats = rows @ luma @ cols.T
    return np.clip(feats, 0.0, 1.0).ravel()


def mse_loss(pred, truth) -> float:
    """Mean of squared residuals over every (sample, joint) cell."""
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    truth = np.atleast_2d(np.asarray(truth, dtype=np.float64))
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("empty batch")
    r = pred - truth
    return float(np.mean(r * r))


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 4500
    batch_size: int = 32
    learning_rate: float = 0.05
    hidden_size: int = 64
    checkpoint_every: int = 500
    seed: int = 0
    down_w: int = 32
    down_h: int = 32

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        for name in ("batch_size", "hidden_size", "checkpoint_every", "down_w", "down_h"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


class Gradients(NamedTuple):
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass
class ModelParams:
    w1: np.ndarray  # (H, F)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (J, H)
    b2: np.ndarray  # (J,)
    out_mid: np.ndarray  # (J,) fixed, joint range midpoints
    out_half: np.ndarray  # (J,) fixed, joint range half-widths
    out_min: np.ndarray  # (J,) fixed, exact joint bounds; absorb rounding in mid + half
    out_max: np.ndarray
    down_w: int
    down_h: int

    TRAINABLE = ("w1", "b1", "w2", "b2")
    FIXED = ("out_mid", "out_half", "out_min", "out_max")

    @classmethod
    def init(cls, space: JointSpace, config: TrainConfig, rng: np.random.Generator | None = None) -> ModelParams:
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization."""
        rng = rng or np.random.Generator(np.random.PCG64(config.seed))
        f, h, j = config.down_w * config.down_h, config.hidden_size, len(space)
        a1, a2 = 1.0 / np.sqrt(f), 1.0 / np.sqrt(h)
        return cls(
            w1=rng.uniform(-a1, a1, (h, f)),
            b1=rng.uniform(-a1, a1, h),
            w2=rng.uniform(-a2, a2, (j, h)),
            b2=rng.uniform(-a2, a2, j),
            out_mid=space.midpoints.copy(),
            out_half=0.5 * space.widths,
            out_min=space.mins.copy(),
            out_max=space.maxs.copy(),
            down_w=config.down_w,
            down_h=config.down_h,
        )

    @classmethod
    def zeros(cls, space: JointSpace, down_w: int = 32, down_h: int = 32, hidden_size: int = 64) -> ModelParams:
        f, j = down_w * down_h, len(space)
        return cls(
            np.zeros((hidden_size, f)), np.zeros(hidden_size), np.zeros((j, hidden_size)), np.zeros(j),
            space.midpoints.copy(), 0.5 * space.widths, space.mins.copy(), space.maxs.copy(), down_w, down_h,
        )

    def copy(self) -> ModelParams:
        return ModelParams(*(getattr(self, k).copy() for k in self.TRAINABLE + self.FIXED), self.down_w, self.down_h)

    def is_finite(self) -> bool:
        return all(np.isfinite(getattr(self, k)).all() for k in self.TRAINABLE)


def _forward(params: ModelParams, x: np.ndarray):
    hidden = np.tanh(x @ params.w1.T + params.b1)
    if not np.isfinite(hidden).all():
        raise NonFiniteError("hidden")
    squashed = np.tanh(hidden @ params.w2.T + params.b2)
    if not np.isfinite(squashed).all():
        raise NonFiniteError("output")
    pred = np.clip(params.out_mid + params.out_half * squashed, params.out_min, params.out_max)
    return hidden, squashed, pred


def predict_features(params: ModelParams, features: np.ndarray) -> np.ndarray:
    return _forward(params, np.atleast_2d(features))[2]


def predict(params: ModelParams, image: Image) -> np.ndarray:
    return predict_features(params, extract_features(image, params.down_w, params.down_h))[0]


def loss_and_gradient(params: ModelParams, features: np.ndarray, truths: np.ndarray) -> tuple[float, Gradients]:
    x = np.atleast_2d(features)
    y = np.atleast_2d(truths)
    hidden, squashed, pred = _forward(params, x)
    loss = mse_loss(pred, y)
    d_pred = 2.0 * (pred - y) / y.size
    d_z = d_pred * params.out_half * (1.0 - squashed * squashed)
    d_hidden = d_z @ params.w2
    d_a = d_hidden * (1.0 - hidden * hidden)
    grads = Gradients(w1=d_a.T @ x, b1=d_a.sum(axis=0), w2=d_z.T @ hidden, b2=d_z.sum(axis=0))
    return loss, grads


def loss_gradient(params: ModelParams, features: np.ndarray, truths: np.ndarray) -> Gradients:
    return loss_and_gradient(params, features, truths)[1]


@dataclass
class Checkpoint:
    step: int
    params: ModelParams
    train_loss: float
    config: TrainConfig | None = None
    image_width: int | None = None
    image_height: int | None = None
    joint_names: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        p = self.params
        return {
            "format_version": CHECKPOINT_FORMAT,
            "step": self.step,
            "train_loss": self.train_loss,
            "config": asdict(self.config) if self.config else None,
            "image_width": self.image_width,
            "image_height": self.image_height,
            "joint_names": list(self.joint_names),
            "down_w": p.down_w,
            "down_h": p.down_h,
            "shapes": {k: list(getattr(p, k).shape) for k in ModelParams.TRAINABLE + ModelParams.FIXED},
            "params": {k: getattr(p, k).ravel().tolist() for k in ModelParams.TRAINABLE + ModelParams.FIXED},
        }

    def save(self, directory: str | Path) -> Path:
        path = Path(directory) / f"ckpt-{self.step:06d}.json"
        path.write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> Checkpoint:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        if d.get("format_version") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: unsupported checkpoint format {d.get('format_version')!r}")
        arrays = {
            k: np.array(d["params"][k], dtype=np.float64).reshape(d["shapes"][k])
            for k in ModelParams.TRAINABLE + ModelParams.FIXED
        }
        params = ModelParams(**arrays, down_w=int(d["down_w"]), down_h=int(d["down_h"]))
        if not params.is_finite():
            raise ValueError(f"{path}: non-finite parameters")
        return cls(
            step=int(d["step"]),
            params=params,
            train_loss=float(d["train_loss"]),
            config=TrainConfig(**d["config"]) if d.get("config") else None,
            image_width=d.get("image_width"),
            image_height=d.get("image_height"),
            joint_names=tuple(d.get("joint_names", ())),
        )


def load_split(ds: Dataset, split: str, down_w: int, down_h: int) -> tuple[np.ndarray, np.ndarray]:
    """Features (N, F) and joint vectors (N, J) for one split of a dataset."""
    indices = ds.manifest.split_indices(split)
    feats = np.empty((len(indices), down_w * down_h))
    truths = np.empty((len(indices), len(ds.space)))
    directory = ds.split_dir(split)
    for row, index in enumerate(indices):
        image, q = read_record(directory, index, ds.space)
        feats[row] = extract_features(image, down_w, down_h)
        truths[row] = q
    return feats, truths


def train(dataset: str | Path, config: TrainConfig, out: str | Path) -> list[Checkpoint]:
    """Mini-batch SGD on the train split; writes ``ckpt-XXXXXX.json`` files to ``out``."""
    ds = load_dataset(dataset)
    if ds.manifest.train_count == 0:
        raise ValueError("dataset has an empty train split")
    features, truths = load_split(ds, "train", config.down_w, config.down_h)
    return train_arrays(ds.space, features, truths, config, out,
                        image_size=(ds.manifest.camera.width, ds.manifest.camera.height))


def train_arrays(
    space: JointSpace,
    features: np.ndarray,
    truths: np.ndarray,
    config: TrainConfig,
    out: str | Path | None = None,
    image_size: tuple[int, int] | None = None,
) -> list[Checkpoint]:
    rng = np.random.Generator(np.random.PCG64(config.seed))
    params = ModelParams.init(space, config, rng)
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
    width, height = image_size or (None, None)

    def checkpoint(step: int) -> Checkpoint:
        loss = mse_loss(predict_features(params, features), truths)
        ckpt = Checkpoint(step, params.copy(), loss, config, width, height, tuple(space.names))
        if out is not None:
            ckpt.save(out)
        log.info("step %d train_loss %.6f", step, loss)
        return ckpt

    if config.steps == 0:
        return [checkpoint(0)]
    n = len(features)
    order = rng.permutation(n)
    cursor = 0
    checkpoints = []
    for step in range(1, config.steps + 1):
        if cursor + config.batch_size > n:
            order = rng.permutation(n)
            cursor = 0
        batch = order[cursor:cursor + config.batch_size]
        cursor += config.batch_size
        try:
            loss, grads = loss_and_gradient(params, features[batch], truths[batch])
        except NonFiniteError as exc:
            raise NonFiniteError(exc.layer, step) from None
        if not np.isfinite(loss):
            raise NonFiniteError("loss", step)
        for name, g in zip(ModelParams.TRAINABLE, grads):
            getattr(params, name).__isub__(config.learning_rate * g)
        if not params.is_finite():
            raise NonFiniteError("parameter", step)
        if step % config.checkpoint_every == 0 or step == config.steps:
            checkpoints.append(checkpoint(step))
    return checkpoints
