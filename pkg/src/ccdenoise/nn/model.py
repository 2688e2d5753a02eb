"""ResUNet++-style encoder/decoder with a classification head.

Layout for ``levels = L`` and widths ``c_k = base_channels * channel_growth**k``::

    stem        conv3x3(1 -> c0) -> BN -> ReLU
    enc k       residual(c_k) -> SE(c_k) -> [skip k] -> conv3x3/2(c_k -> c_k+1) -> BN -> ReLU
    bridge      ASPP(c_L)                      -> GAP -> linear -> logits
    dec k       attention(c_k+1) -> upsample x2 -> concat(skip k)
                -> conv1x1(c_k+1 + c_k -> c_k) -> BN -> ReLU -> residual(c_k)
    out         conv1x1(c0 -> 1) -> sigmoid

A residual unit is ``x + BN(conv(ReLU(BN(conv(x)))))``.  Convolutions that
feed a batch norm carry no bias.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import layers as L

SE_REDUCTION = 4


@dataclass(frozen=True)
class NetConfig:
    levels: int = 3
    base_channels: int = 16
    aspp_rates: tuple = (1, 2, 4)
    num_classes: int = 3
    input_size: tuple = (64, 64)
    channel_growth: int = 1

    def __post_init__(self):
        object.__setattr__(self, "aspp_rates", tuple(int(r) for r in self.aspp_rates))
        object.__setattr__(self, "input_size", tuple(int(s) for s in self.input_size))
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.base_channels < 1 or self.channel_growth < 1:
            raise ValueError("base_channels and channel_growth must be >= 1")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if not self.aspp_rates or min(self.aspp_rates) < 1:
            raise ValueError("aspp_rates must be non-empty and >= 1")
        if len(self.input_size) != 2:
            raise ValueError("input_size must be (H, W)")
        step = 2 ** self.levels
        h, w = self.input_size
        if h < step or w < step or h % step or w % step:
            raise ValueError(f"input size {h}x{w} not divisible by 2**levels = {step}")

    def width(self, k: int) -> int:
        return self.base_channels * self.channel_growth ** k

    def to_dict(self) -> dict:
        d = asdict(self)
        d["aspp_rates"] = list(self.aspp_rates)
        d["input_size"] = list(self.input_size)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown NetConfig keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ModelParams:
    config: NetConfig
    weights: dict
    buffers: dict

    def copy(self) -> "ModelParams":
        return ModelParams(self.config,
                           {k: v.copy() for k, v in self.weights.items()},
                           {k: v.copy() for k, v in self.buffers.items()})

    def num_parameters(self) -> int:
        return sum(v.size for v in self.weights.values())


@dataclass
class ForwardOutput:
    denoised: np.ndarray
    logits: np.ndarray
    cache: Optional[dict]
    buffers: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# parameter layout
# ---------------------------------------------------------------------------

def _hidden(c):
    return max(1, c // SE_REDUCTION)


def _att_hidden(c):
    return max(1, c // 2)


def param_shapes(config: NetConfig):
    """Ordered ``(name, shape, fan_in, gain)`` for every learnable tensor,
    and the batch-norm layer names."""
    specs = []
    bns = []

    def conv(name, k, cin, cout, bias=False, gain=2.0):
        specs.append((name + ".w", (k, k, cin, cout), k * k * cin, gain))
        if bias:
            specs.append((name + ".b", (cout,), None, 0.0))

    def bn(name, c):
        specs.append((name + ".gamma", (c,), None, 1.0))
        specs.append((name + ".beta", (c,), None, 0.0))
        bns.append((name, c))

    def residual(name, c):
        conv(name + ".conv1", 3, c, c)
        bn(name + ".bn1", c)
        conv(name + ".conv2", 3, c, c)
        bn(name + ".bn2", c)

    c0 = config.width(0)
    conv("stem.conv", 3, 1, c0)
    bn("stem.bn", c0)
    for k in range(config.levels):
        ck, cn = config.width(k), config.width(k + 1)
        residual(f"enc{k}.res", ck)
        specs.append((f"enc{k}.se.w1", (ck, _hidden(ck)), ck, 2.0))
        specs.append((f"enc{k}.se.w2", (_hidden(ck), ck), _hidden(ck), 1.0))
        conv(f"enc{k}.down", 3, ck, cn)
        bn(f"enc{k}.down.bn", cn)
    cb = config.width(config.levels)
    for i, _ in enumerate(config.aspp_rates):
        conv(f"aspp.branch{i}", 3, cb, cb, bias=True, gain=1.0)
    conv("aspp.proj", 1, cb, cb, bias=True, gain=1.0)
    specs.append(("head.w", (cb, config.num_classes), cb, 1.0))
    specs.append(("head.b", (config.num_classes,), None, 0.0))
    for k in reversed(range(config.levels)):
        ck, cd = config.width(k), config.width(k + 1)
        m = _att_hidden(cd)
        specs.append((f"dec{k}.att.w1", (cd, m), cd, 1.0))
        specs.append((f"dec{k}.att.w2", (m, cd), m, 1.0))
        specs.append((f"dec{k}.att.b1", (m,), None, 0.0))
        specs.append((f"dec{k}.att.b2", (cd,), None, 0.0))
        conv(f"dec{k}.proj", 1, cd + ck, ck)
        bn(f"dec{k}.proj.bn", ck)
        residual(f"dec{k}.res", ck)
    conv("out", 1, c0, 1, bias=True, gain=1.0)
    return specs, bns


def init_params(config: NetConfig, seed: int) -> ModelParams:
    """Fan-in scaled normal weights from a PCG64 stream; BN scale 1, shift 0, biases 0."""
    if not isinstance(config, NetConfig):
        raise TypeError("config must be a NetConfig")
    rng = np.random.Generator(np.random.PCG64(seed))
    specs, bns = param_shapes(config)
    weights = {}
    for name, shape, fan_in, gain in specs:
        if fan_in is None:
            weights[name] = np.full(shape, gain, dtype=np.float64)
        else:
            weights[name] = rng.standard_normal(shape) * np.sqrt(gain / fan_in)
    buffers = {}
    for name, c in bns:
        buffers[name + ".mean"] = np.zeros(c)
        buffers[name + ".var"] = np.ones(c)
    return ModelParams(config, weights, buffers)


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

class _Run:
    """Bookkeeping for one forward pass (and, later, its backward)."""

    def __init__(self, params: ModelParams, train: bool):
        self.w = params.weights
        self.buf = params.buffers
        self.train = train
        self.new_buffers = {}
        self.grads = {}

    # -- forward pieces --
    def conv(self, x, name, stride=1, dilation=1):
        y, cache = L.conv2d_forward(x, self.w[name + ".w"], self.w.get(name + ".b"),
                                    stride=stride, dilation=dilation)
        return y, (name, cache)

    def bn(self, x, name):
        y, cache, (rm, rv) = L.batchnorm_forward(
            x, self.w[name + ".gamma"], self.w[name + ".beta"],
            self.buf[name + ".mean"], self.buf[name + ".var"], self.train)
        self.new_buffers[name + ".mean"] = rm
        self.new_buffers[name + ".var"] = rv
        return y, (name, cache)

    def residual(self, x, name):
        h1, c1 = self.conv(x, name + ".conv1")
        h2, b1 = self.bn(h1, name + ".bn1")
        h3 = L.relu(h2)
        h4, c2 = self.conv(h3, name + ".conv2")
        h5, b2 = self.bn(h4, name + ".bn2")
        return x + h5, (c1, b1, h2, c2, b2)

    # -- backward pieces --
    def add(self, name, g):
        if name in self.grads:
            self.grads[name] = self.grads[name] + g
        else:
            self.grads[name] = g

    def conv_back(self, dy, rec):
        name, cache = rec
        dx, dw, db = L.conv2d_backward(dy, cache, self.w[name + ".w"])
        self.add(name + ".w", dw)
        if name + ".b" in self.w:
            self.add(name + ".b", db)
        return dx

    def bn_back(self, dy, rec):
        name, cache = rec
        dx, dg, db = L.batchnorm_backward(dy, cache)
        self.add(name + ".gamma", dg)
        self.add(name + ".beta", db)
        return dx

    def residual_back(self, dy, rec):
        c1, b1, h2, c2, b2 = rec
        d = self.bn_back(dy, b2)
        d = self.conv_back(d, c2)
        d = d * (h2 > 0)
        d = self.bn_back(d, b1)
        d = self.conv_back(d, c1)
        return dy + d


def _as_batch(img, config):
    x = np.asarray(img, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != config.input_size:
        raise ValueError(f"shape mismatch: image {x.shape[-2:]} vs model input {config.input_size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite intensity")
    return x, single


def forward(params: ModelParams, img, mode: str = "eval") -> ForwardOutput:
    """Run the network on an ``(H, W)`` image or an ``(N, H, W)`` batch.

    ``mode="train"`` normalises with batch statistics, returns updated running
    statistics in ``ForwardOutput.buffers`` and keeps a cache for ``backward``.
    ``params`` is never modified.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    cfg = params.config
    x, single = _as_batch(img, cfg)
    run = _Run(params, mode == "train")
    w = run.w
    rec = {}

    h = x[..., None]
    h, rec["stem.conv"] = run.conv(h, "stem.conv")
    h, rec["stem.bn"] = run.bn(h, "stem.bn")
    rec["stem.relu"] = h
    h = L.relu(h)

    skips = []
    for k in range(cfg.levels):
        h, rec[f"enc{k}.res"] = run.residual(h, f"enc{k}.res")
        h, rec[f"enc{k}.se"] = L.se_forward(h, w[f"enc{k}.se.w1"], w[f"enc{k}.se.w2"])
        skips.append(h)
        h, rec[f"enc{k}.down"] = run.conv(h, f"enc{k}.down", stride=2)
        h, rec[f"enc{k}.down.bn"] = run.bn(h, f"enc{k}.down.bn")
        rec[f"enc{k}.down.relu"] = h
        h = L.relu(h)

    n_br = len(cfg.aspp_rates)
    h, rec["aspp"] = L.aspp_forward(
        h, [w[f"aspp.branch{i}.w"] for i in range(n_br)],
        [w[f"aspp.branch{i}.b"] for i in range(n_br)],
        w["aspp.proj.w"], w["aspp.proj.b"], cfg.aspp_rates)
    pooled = h.mean(axis=(1, 2))
    logits = pooled @ w["head.w"] + w["head.b"]
    rec["head"] = (pooled, h.shape)

    for k in reversed(range(cfg.levels)):
        h, rec[f"dec{k}.att"] = L.attention_forward(
            h, w[f"dec{k}.att.w1"], w[f"dec{k}.att.w2"], w[f"dec{k}.att.b1"], w[f"dec{k}.att.b2"])
        h = L.upsample2x_forward(h)
        cd = h.shape[3]
        h = np.concatenate([h, skips[k]], axis=3)
        rec[f"dec{k}.split"] = cd
        h, rec[f"dec{k}.proj"] = run.conv(h, f"dec{k}.proj")
        h, rec[f"dec{k}.proj.bn"] = run.bn(h, f"dec{k}.proj.bn")
        rec[f"dec{k}.proj.relu"] = h
        h = L.relu(h)
        h, rec[f"dec{k}.res"] = run.residual(h, f"dec{k}.res")

    z, rec["out"] = run.conv(h, "out")
    out = L.sigmoid(z[..., 0])
    rec["sigmoid"] = out

    buffers = run.new_buffers if run.train else dict(params.buffers)
    cache = {"rec": rec, "single": single, "n": x.shape[0], "id": id(params.weights)} if run.train else None
    if single:
        return ForwardOutput(out[0], logits[0], cache, buffers)
    return ForwardOutput(out, logits, cache, buffers)


def backward(params: ModelParams, cache: dict, d_denoised, d_logits) -> dict:
    """Gradients of ``<d_denoised, denoised> + <d_logits, logits>`` w.r.t. every weight."""
    if cache is None:
        raise ValueError("backward needs the cache of a train-mode forward")
    if cache["id"] != id(params.weights):
        raise ValueError("cache was produced with different parameters")
    cfg = params.config
    rec = cache["rec"]
    run = _Run(params, True)
    w = run.w
    n = cache["n"]
    d_out = np.asarray(d_denoised, dtype=np.float64).reshape(n, *cfg.input_size)
    d_log = np.asarray(d_logits, dtype=np.float64).reshape(n, cfg.num_classes)

    s = rec["sigmoid"]
    dz = (d_out * s * (1.0 - s))[..., None]
    dh = run.conv_back(dz, rec["out"])

    d_skips = [None] * cfg.levels
    for k in range(cfg.levels):
        dh = run.residual_back(dh, rec[f"dec{k}.res"])
        dh = dh * (rec[f"dec{k}.proj.relu"] > 0)
        dh = run.bn_back(dh, rec[f"dec{k}.proj.bn"])
        dh = run.conv_back(dh, rec[f"dec{k}.proj"])
        cd = rec[f"dec{k}.split"]
        d_skips[k] = dh[..., cd:]
        dh = L.upsample2x_backward(np.ascontiguousarray(dh[..., :cd]))
        dh, dw1, dw2, db1, db2 = L.attention_backward(dh, rec[f"dec{k}.att"])
        run.add(f"dec{k}.att.w1", dw1)
        run.add(f"dec{k}.att.w2", dw2)
        run.add(f"dec{k}.att.b1", db1)
        run.add(f"dec{k}.att.b2", db2)

    pooled, bshape = rec["head"]
    run.add("head.w", pooled.T @ d_log)
    run.add("head.b", d_log.sum(axis=0))
    d_pool = d_log @ w["head.w"].T
    dh = dh + np.broadcast_to(d_pool[:, None, None, :] / (bshape[1] * bshape[2]), bshape)

    dh, dws, dbs, dpw, dpb = L.aspp_backward(dh, rec["aspp"])
    for i, (dw, db) in enumerate(zip(dws, dbs)):
        run.add(f"aspp.branch{i}.w", dw)
        run.add(f"aspp.branch{i}.b", db)
    run.add("aspp.proj.w", dpw)
    run.add("aspp.proj.b", dpb)

    for k in reversed(range(cfg.levels)):
        dh = dh * (rec[f"enc{k}.down.relu"] > 0)
        dh = run.bn_back(dh, rec[f"enc{k}.down.bn"])
        dh = run.conv_back(dh, rec[f"enc{k}.down"])
        dh = dh + d_skips[k]
        dh, dw1, dw2 = L.se_backward(dh, rec[f"enc{k}.se"])
        run.add(f"enc{k}.se.w1", dw1)
        run.add(f"enc{k}.se.w2", dw2)
        dh = run.residual_back(dh, rec[f"enc{k}.res"])

    dh = dh * (rec["stem.relu"] > 0)
    dh = run.bn_back(dh, rec["stem.bn"])
    run.conv_back(dh, rec["stem.conv"])

    return {name: run.grads.get(name, np.zeros_like(v)) for name, v in params.weights.items()}


# ---------------------------------------------------------------------------
# stand-alone block evaluation
# ---------------------------------------------------------------------------

def residual_unit(x, weights: dict, stats: Optional[dict] = None, train: bool = True):
    """Evaluate one residual unit on an ``(N, H, W, C)`` map.

    ``weights`` uses the keys ``conv1.w, bn1.gamma, bn1.beta, conv2.w,
    bn2.gamma, bn2.beta``; ``stats`` (needed when ``train`` is False) holds
    ``bn1.mean, bn1.var, bn2.mean, bn2.var``.
    """
    x = np.asarray(x, dtype=np.float64)
    c = x.shape[3]
    if weights["conv1.w"].shape[2:] != (c, c) or weights["conv2.w"].shape[2:] != (c, c):
        raise ValueError("residual unit weights do not match channel count")
    if stats is None:
        stats = {f"bn{i}.{s}": (np.zeros(c) if s == "mean" else np.ones(c))
                 for i in (1, 2) for s in ("mean", "var")}
    fake = ModelParams(None, {"r." + k: v for k, v in weights.items()},
                       {"r." + k: v for k, v in stats.items()})
    y, _ = _Run(fake, train).residual(x, "r")
    return y
