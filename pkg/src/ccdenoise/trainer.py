"""Dual-predictor checkerboard training and fused inference.

The *odd predictor* sees images whose odd pixels were blinded and is
supervised at the odd positions; the *even predictor* mirrors it.  At
inference each predictor fills in its own parity class and the two outputs
are fused.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .checkerboard import Parity, fuse, make_blind, parity_mask
from .image import DatasetManifest
from .losses import LossWeights, composite_loss
from .nn import ModelParams, NetConfig, backward, forward, init_params
from .nn.checkpoint import load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

POSITION_MODES = ("blinded_only", "full_image")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 12
    batch_size: int = 16
    lr: float = 1e-3
    lr_milestones: Optional[tuple] = None
    lr_gamma: float = 0.1
    loss_weights: LossWeights = field(default_factory=LossWeights)
    loss_positions: str = "blinded_only"
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if isinstance(self.loss_weights, dict):
            object.__setattr__(self, "loss_weights", LossWeights(**self.loss_weights))
        elif isinstance(self.loss_weights, (list, tuple)):
            object.__setattr__(self, "loss_weights", LossWeights(*self.loss_weights))
        if self.lr_milestones is None:
            # 60% / 85% of the run
            ms = sorted({int(0.6 * self.epochs), int(0.85 * self.epochs)} - {0})
            ms = [m for m in ms if m < self.epochs]
            object.__setattr__(self, "lr_milestones", tuple(ms))
        else:
            object.__setattr__(self, "lr_milestones", tuple(int(m) for m in self.lr_milestones))
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (self.lr > 0 and math.isfinite(self.lr)):
            raise ValueError("lr must be positive")
        ms = self.lr_milestones
        if any(b <= a for a, b in zip(ms, ms[1:])) or any(m < 0 or m >= max(self.epochs, 1) for m in ms):
            raise ValueError("lr_milestones must be strictly increasing and < epochs")
        if not 0 < self.lr_gamma <= 1:
            raise ValueError("lr_gamma must lie in (0, 1]")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if not self.adam_eps > 0:
            raise ValueError("adam_eps must be positive")
        if self.loss_positions not in POSITION_MODES:
            raise ValueError(f"loss_positions must be one of {POSITION_MODES}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lr_milestones"] = list(self.lr_milestones)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)


def lr_at(epoch: int, config: TrainConfig) -> float:
    passed = sum(1 for m in config.lr_milestones if m <= epoch)
    return config.lr * config.lr_gamma ** passed


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class OptimizerState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "OptimizerState":
        return cls({k: np.zeros_like(w) for k, w in params.weights.items()},
                   {k: np.zeros_like(w) for k, w in params.weights.items()}, 0)


def adam_step(params: ModelParams, grads: dict, state: OptimizerState, lr: float,
              beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update.  Returns new ``(params, state)``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}")
    t = state.t + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    weights, m_new, v_new = {}, {}, {}
    for name, w in params.weights.items():
        g = grads[name]
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        weights[name] = w - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        m_new[name], v_new[name] = m, v
    return ModelParams(params.config, weights, dict(params.buffers)), OptimizerState(m_new, v_new, t)


# ---------------------------------------------------------------------------
# single step
# ---------------------------------------------------------------------------

def batch_objective(model: ModelParams, batch, blind_parity: Parity, config: TrainConfig):
    """Blind, run forward in train mode and evaluate the batch-mean objective.

    Returns ``(loss, d_pred, d_logits, forward_output)``.
    """
    blind_parity = Parity.parse(blind_parity)
    images = [np.asarray(img, dtype=np.float64) for img, _ in batch]
    shape = model.config.input_size
    for img in images:
        if img.shape != shape:
            raise ValueError(f"shape mismatch: image {img.shape} vs model input {shape}")
    blinded = np.stack([make_blind(img, blind_parity).image for img in images])
    out = forward(model, blinded, "train")
    positions = parity_mask(*shape, blind_parity) if config.loss_positions == "blinded_only" else None
    n = len(images)
    d_pred = np.empty_like(out.denoised)
    d_logits = np.empty_like(out.logits)
    total = 0.0
    for i, ((_, label), target) in enumerate(zip(batch, images)):
        j, dp, dl = composite_loss(out.denoised[i], target, positions, out.logits[i],
                                   int(label), config.loss_weights)
        total += j
        d_pred[i] = dp / n
        d_logits[i] = dl / n
    return total / n, d_pred, d_logits, out


def train_step(model: ModelParams, opt: OptimizerState, batch, blind_parity: Parity,
               config: TrainConfig, lr: Optional[float] = None):
    """Forward/backward over ``batch`` (list of ``(image, label)``) and one Adam update."""
    loss, d_pred, d_logits, out = batch_objective(model, batch, blind_parity, config)
    if not math.isfinite(loss):
        raise FloatingPointError(f"non-finite training loss {loss}")
    grads = backward(model, out.cache, d_pred, d_logits)
    new_model, new_opt = adam_step(model, grads, opt, config.lr if lr is None else lr,
                                   config.adam_beta1, config.adam_beta2, config.adam_eps)
    new_model.buffers = out.buffers
    return new_model, new_opt, loss


# ---------------------------------------------------------------------------
# dual model
# ---------------------------------------------------------------------------

@dataclass
class DualModel:
    odd_predictor: ModelParams
    even_predictor: ModelParams

    def __post_init__(self):
        if self.odd_predictor.config != self.even_predictor.config:
            raise ValueError("both predictors must share one NetConfig")

    @property
    def config(self) -> NetConfig:
        return self.odd_predictor.config

    def predictor(self, which: str) -> ModelParams:
        return {"odd": self.odd_predictor, "even": self.even_predictor}[which]

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        save_checkpoint(self.odd_predictor, d / "odd.ckpt")
        save_checkpoint(self.even_predictor, d / "even.ckpt")
        index = {"format_version": 1, "config": self.config.to_dict(),
                 "odd": "odd.ckpt", "even": "even.ckpt"}
        (d / "model.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory) -> "DualModel":
        d = Path(directory)
        index = json.loads((d / "model.json").read_text())
        return cls(load_checkpoint(d / index["odd"]), load_checkpoint(d / index["even"]))


# which predictor hides (and predicts) which parity
BLIND_OF = {"odd": Parity.ODD, "even": Parity.EVEN}
_SEED_TAG = {"odd": 1, "even": 2}


def _init_dual(net_config, seed):
    return {which: init_params(net_config, [seed, tag]) for which, tag in _SEED_TAG.items()}


def train_dual(manifest: DatasetManifest, net_config: NetConfig, train_config: TrainConfig,
               images=None, on_epoch: Optional[Callable] = None):
    """Train both predictors independently on the same schedule.

    ``images`` may supply preloaded arrays in manifest order.  Returns
    ``(DualModel, log_rows)`` with one ``{"epoch", "model", "mean_loss", "lr"}``
    row per epoch and predictor.
    """
    if len(manifest) == 0:
        raise ValueError("empty manifest")
    if images is None:
        images = manifest.load_images()
    labels = manifest.labels
    for rec, img in zip(manifest, images):
        if img.shape != net_config.input_size:
            raise ValueError(f"{rec.path}: shape {img.shape} does not match model input "
                             f"{net_config.input_size}")
    cfg = train_config
    models = _init_dual(net_config, cfg.seed)
    rows = []
    n = len(images)
    for which in ("odd", "even"):
        model = models[which]
        opt = OptimizerState.zeros_like(model)
        for epoch in range(cfg.epochs):
            lr = lr_at(epoch, cfg)
            order = np.random.Generator(np.random.PCG64([cfg.seed, _SEED_TAG[which], epoch])).permutation(n)
            total = 0.0
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                batch = [(images[i], labels[i]) for i in idx]
                try:
                    model, opt, loss = train_step(model, opt, batch, BLIND_OF[which], cfg, lr=lr)
                except FloatingPointError as exc:
                    raise FloatingPointError(f"{which} predictor diverged in epoch {epoch}: {exc}") from exc
                total += loss * len(idx)
            row = {"epoch": epoch, "model": which, "mean_loss": total / n, "lr": lr}
            rows.append(row)
            log.info("epoch %d %s loss %.6f lr %.2e", epoch, which, row["mean_loss"], lr)
            if on_epoch is not None:
                on_epoch(row)
        models[which] = model
    return DualModel(models["odd"], models["even"]), rows


def write_log_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "model", "mean_loss", "lr"])
        w.writeheader()
        for r in rows:
            w.writerow({**r, "mean_loss": repr(float(r["mean_loss"])), "lr": repr(float(r["lr"]))})


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------

def _predict(model: DualModel, images, which):
    blinded = np.stack([make_blind(img, BLIND_OF[which]).image for img in images])
    return forward(model.predictor(which), blinded, "eval")


def denoise_batch(model: DualModel, images, chunk: int = 32):
    out = []
    for start in range(0, len(images), chunk):
        part = [np.asarray(im, dtype=np.float64) for im in images[start:start + chunk]]
        odd = _predict(model, part, "odd").denoised
        even = _predict(model, part, "even").denoised
        out.extend(fuse(o, e) for o, e in zip(odd, even))
    return out


def denoise(model: DualModel, img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.shape != model.config.input_size:
        raise ValueError(f"shape mismatch: image {img.shape} vs model input {model.config.input_size}")
    return denoise_batch(model, [img])[0]


def classify_batch(model: DualModel, images, which: str = "odd", chunk: int = 32) -> np.ndarray:
    """Class logits from one predictor's encoder head, shape ``(N, num_classes)``."""
    out = []
    for start in range(0, len(images), chunk):
        out.append(_predict(model, images[start:start + chunk], which).logits)
    return np.concatenate(out, axis=0)


def with_weights(config: TrainConfig, w_r: float, w_c: float) -> TrainConfig:
    return replace(config, loss_weights=LossWeights(w_r, w_c))
