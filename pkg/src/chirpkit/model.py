"""Small trainable networks: conv/MLP backbones, exact backprop, freezing.

Parameters live in one flat float32 vector with per-layer views; the
float64 path exists for finite-difference gradient checks.  Three
architecture families are registered: a 4-block CNN teacher, a 2-block CNN
student, and a patch-flatten MLP student with a deliberately different
inductive bias.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import CheckpointError, ConfigError

CHECKPOINT_MAGIC = b"CHIRPCK1"


# ---------------------------------------------------------------------------
# Layer specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Conv2D:
    out_channels: int
    kernel: int = 3
    stride: int = 1
    kind: str = field(default="conv", init=False)


@dataclass(frozen=True)
class ReLU:
    kind: str = field(default="relu", init=False)


@dataclass(frozen=True)
class Pool2D:
    size: int = 2
    pool: str = "max"  # or "avg"
    kind: str = field(default="pool", init=False)


@dataclass(frozen=True)
class GlobalAvgPool:
    kind: str = field(default="gap", init=False)


@dataclass(frozen=True)
class PatchFlatten:
    patch_h: int
    patch_w: int
    kind: str = field(default="patchflatten", init=False)


@dataclass(frozen=True)
class Dense:
    out_features: int
    kind: str = field(default="dense", init=False)


_LAYER_KINDS = {
    "conv": Conv2D,
    "relu": ReLU,
    "pool": Pool2D,
    "gap": GlobalAvgPool,
    "patchflatten": PatchFlatten,
    "dense": Dense,
}


def _layer_to_dict(layer) -> dict:
    d = {"kind": layer.kind}
    for k, v in layer.__dict__.items():
        if k != "kind":
            d[k] = v
    return d


def _layer_from_dict(d: dict):
    d = dict(d)
    cls = _LAYER_KINDS[d.pop("kind")]
    return cls(**d)


@dataclass(frozen=True)
class NetworkSpec:
    """Backbone layer chain + dense head + output nonlinearity."""

    input_shape: tuple  # (n_mels, n_frames)
    backbone: tuple
    n_classes: int
    activation: str = "softmax"  # or "sigmoid"

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "backbone", tuple(self.backbone))
        if self.activation not in ("softmax", "sigmoid"):
            raise ConfigError(f"unknown activation {self.activation!r}")
        self.shape_chain()  # validates

    def shape_chain(self) -> list:
        """Propagate shapes through the backbone; raises on inconsistency."""
        shape = (1,) + self.input_shape  # (C, H, W)
        chain = [shape]
        for layer in self.backbone:
            if isinstance(layer, Conv2D):
                if len(shape) != 3:
                    raise ConfigError(f"conv needs a (C,H,W) input, got {shape}")
                c, h, w = shape
                p = layer.kernel // 2
                h = (h + 2 * p - layer.kernel) // layer.stride + 1
                w = (w + 2 * p - layer.kernel) // layer.stride + 1
                shape = (layer.out_channels, h, w)
            elif isinstance(layer, Pool2D):
                c, h, w = shape
                if h < layer.size or w < layer.size:
                    raise ConfigError(f"pool {layer.size} too large for {shape}")
                shape = (c, h // layer.size, w // layer.size)
            elif isinstance(layer, GlobalAvgPool):
                shape = (shape[0],)
            elif isinstance(layer, PatchFlatten):
                c, h, w = shape
                nh, nw = h // layer.patch_h, w // layer.patch_w
                if nh == 0 or nw == 0:
                    raise ConfigError(f"patch {layer.patch_h}x{layer.patch_w} too large for {shape}")
                shape = (nh * nw * c * layer.patch_h * layer.patch_w,)
            elif isinstance(layer, Dense):
                if len(shape) != 1:
                    raise ConfigError(f"dense needs a flat input, got {shape}")
                shape = (layer.out_features,)
            elif isinstance(layer, ReLU):
                pass
            else:
                raise ConfigError(f"unknown layer {layer!r}")
            chain.append(shape)
        if len(chain[-1]) != 1:
            raise ConfigError(f"backbone must end flat, ends with {chain[-1]}")
        return chain

    @property
    def embedding_dim(self) -> int:
        return self.shape_chain()[-1][0]

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "backbone": [_layer_to_dict(l) for l in self.backbone],
            "n_classes": self.n_classes,
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(
            input_shape=tuple(d["input_shape"]),
            backbone=tuple(_layer_from_dict(l) for l in d["backbone"]),
            n_classes=d["n_classes"],
            activation=d["activation"],
        )


# ---------------------------------------------------------------------------
# Parameter layout and network container
# ---------------------------------------------------------------------------

def _param_shapes(spec: NetworkSpec) -> list:
    """[(layer_index_or_'head', [shape, ...]), ...] for parameterized layers."""
    shapes = []
    chain = spec.shape_chain()
    for i, layer in enumerate(spec.backbone):
        in_shape = chain[i]
        if isinstance(layer, Conv2D):
            shapes.append((i, [(layer.out_channels, in_shape[0], layer.kernel, layer.kernel),
                               (layer.out_channels,)]))
        elif isinstance(layer, Dense):
            shapes.append((i, [(in_shape[0], layer.out_features), (layer.out_features,)]))
    shapes.append(("head", [(spec.embedding_dim, spec.n_classes), (spec.n_classes,)]))
    return shapes


class Network:
    """Spec + flat parameter vector + per-parameter frozen mask."""

    def __init__(self, spec: NetworkSpec, params: np.ndarray = None, seed: int = 0):
        self.spec = spec
        self._layout = _param_shapes(spec)
        n = sum(int(np.prod(s)) for _, group in self._layout for s in group)
        if params is None:
            params = _init_params(spec, self._layout, n, seed)
        params = np.asarray(params)
        if params.size != n:
            raise ConfigError(f"expected {n} parameters, got {params.size}")
        self.params = params.reshape(-1)
        self.frozen_mask = np.zeros(n, dtype=bool)

    @property
    def n_params(self) -> int:
        return self.params.size

    def views(self) -> dict:
        """Shaped views into the flat vector, keyed by layer index / 'head'."""
        out = {}
        offset = 0
        for key, group in self._layout:
            arrs = []
            for shape in group:
                size = int(np.prod(shape))
                arrs.append(self.params[offset : offset + size].reshape(shape))
                offset += size
            out[key] = arrs
        return out

    def head_slice(self) -> slice:
        offset = 0
        for key, group in self._layout:
            size = sum(int(np.prod(s)) for s in group)
            if key == "head":
                return slice(offset, offset + size)
            offset += size
        raise AssertionError("no head in layout")

    def astype(self, dtype) -> "Network":
        clone = Network(self.spec, params=self.params.astype(dtype))
        clone.frozen_mask = self.frozen_mask.copy()
        return clone

    def clone(self) -> "Network":
        return self.astype(self.params.dtype)


def _init_params(spec, layout, n, seed) -> np.ndarray:
    """Kaiming-uniform weights, zero biases, zero-init head bias."""
    rng = np.random.default_rng(seed)
    flat = np.zeros(n, dtype=np.float32)
    offset = 0
    for key, group in layout:
        w_shape, b_shape = group
        fan_in = int(np.prod(w_shape[1:])) if len(w_shape) == 4 else w_shape[0]
        bound = np.sqrt(6.0 / fan_in)
        w_size = int(np.prod(w_shape))
        flat[offset : offset + w_size] = rng.uniform(-bound, bound, w_size).astype(np.float32)
        offset += w_size + int(np.prod(b_shape))  # biases stay zero
    return flat


def build_network(name_or_spec, input_shape=None, n_classes=None,
                  activation="softmax", seed: int = 0, **sizes) -> Network:
    if isinstance(name_or_spec, NetworkSpec):
        return Network(name_or_spec, seed=seed)
    spec = make_spec(name_or_spec, input_shape, n_classes, activation, **sizes)
    return Network(spec, seed=seed)


# ---------------------------------------------------------------------------
# Layer forward/backward
# ---------------------------------------------------------------------------

def _conv_forward(x, w, b, stride):
    bsz, c, h, wd = x.shape
    o, _, k, _ = w.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    y = np.einsum("bchwij,ocij->bohw", win, w, optimize=True)
    y += b[None, :, None, None]
    return y, (xp, win, x.shape, stride)


def _conv_backward(dy, cache, w):
    xp, win, x_shape, stride = cache
    o, c, k, _ = w.shape
    p = k // 2
    dw = np.einsum("bchwij,bohw->ocij", win, dy, optimize=True)
    db = dy.sum(axis=(0, 2, 3))
    dxp = np.zeros_like(xp)
    _, _, ho, wo = dy.shape
    for i in range(k):
        for j in range(k):
            patch = np.einsum("bohw,oc->bchw", dy, w[:, :, i, j], optimize=True)
            dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += patch
    bsz, cc, h, wd = x_shape
    dx = dxp[:, :, p : p + h, p : p + wd]
    return dx, dw, db


def _pool_forward(x, size, pool):
    bsz, c, h, w = x.shape
    ho, wo = h // size, w // size
    xc = x[:, :, : ho * size, : wo * size]
    windows = xc.reshape(bsz, c, ho, size, wo, size).transpose(0, 1, 2, 4, 3, 5)
    windows = windows.reshape(bsz, c, ho, wo, size * size)
    if pool == "max":
        idx = windows.argmax(axis=-1)
        y = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
        return y, (x.shape, size, pool, idx)
    y = windows.mean(axis=-1)
    return y, (x.shape, size, pool, None)


def _pool_backward(dy, cache):
    x_shape, size, pool, idx = cache
    bsz, c, h, w = x_shape
    ho, wo = h // size, w // size
    dwin = np.zeros((bsz, c, ho, wo, size * size), dtype=dy.dtype)
    if pool == "max":
        np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=-1)
    else:
        dwin[:] = (dy / (size * size))[..., None]
    dxc = dwin.reshape(bsz, c, ho, wo, size, size).transpose(0, 1, 2, 4, 3, 5)
    dxc = dxc.reshape(bsz, c, ho * size, wo * size)
    dx = np.zeros(x_shape, dtype=dy.dtype)
    dx[:, :, : ho * size, : wo * size] = dxc
    return dx


def _patchflatten_forward(x, ph, pw):
    bsz, c, h, w = x.shape
    nh, nw = h // ph, w // pw
    xc = x[:, :, : nh * ph, : nw * pw]
    patches = xc.reshape(bsz, c, nh, ph, nw, pw).transpose(0, 2, 4, 1, 3, 5)
    y = patches.reshape(bsz, nh * nw * c * ph * pw)
    return y, (x.shape, ph, pw)


def _patchflatten_backward(dy, cache):
    x_shape, ph, pw = cache
    bsz, c, h, w = x_shape
    nh, nw = h // ph, w // pw
    dpatches = dy.reshape(bsz, nh, nw, c, ph, pw).transpose(0, 3, 1, 4, 2, 5)
    dx = np.zeros(x_shape, dtype=dy.dtype)
    dx[:, :, : nh * ph, : nw * pw] = dpatches.reshape(bsz, c, nh * ph, nw * pw)
    return dx


# ---------------------------------------------------------------------------
# Network forward/backward
# ---------------------------------------------------------------------------

def forward(net: Network, x: np.ndarray):
    """Run the network on a (batch, n_mels, n_frames) array.

    Returns (logits, cache); compute dtype follows the parameter dtype.
    """
    dtype = net.params.dtype
    x = np.asarray(x, dtype=dtype)
    if x.ndim == 2:
        x = x[None]
    if x.shape[1:] != net.spec.input_shape:
        raise ConfigError(
            f"input shape {x.shape[1:]} does not match spec {net.spec.input_shape}"
        )
    views = net.views()
    h = x[:, None, :, :]  # (B, 1, H, W)
    cache = []
    for i, layer in enumerate(net.spec.backbone):
        if isinstance(layer, Conv2D):
            w, b = views[i]
            h, c = _conv_forward(h, w, b, layer.stride)
            cache.append(("conv", i, c))
        elif isinstance(layer, ReLU):
            mask = h > 0
            h = h * mask
            cache.append(("relu", i, mask))
        elif isinstance(layer, Pool2D):
            h, c = _pool_forward(h, layer.size, layer.pool)
            cache.append(("pool", i, c))
        elif isinstance(layer, GlobalAvgPool):
            cache.append(("gap", i, h.shape))
            h = h.mean(axis=(2, 3))
        elif isinstance(layer, PatchFlatten):
            h, c = _patchflatten_forward(h, layer.patch_h, layer.patch_w)
            cache.append(("patchflatten", i, c))
        elif isinstance(layer, Dense):
            w, b = views[i]
            cache.append(("dense", i, h))
            h = h @ w + b
    embedding = h
    w, b = views["head"]
    logits = embedding @ w + b
    cache.append(("head", "head", embedding))
    return logits, cache


def embed(net: Network, x: np.ndarray) -> np.ndarray:
    """Backbone output f1(X) for a batch."""
    _, cache = forward(net, x)
    return cache[-1][2]


def backward(net: Network, cache: list, dlogits: np.ndarray) -> np.ndarray:
    """Exact reverse-mode gradient of the scalar loss whose dLoss/dLogits is
    given; entries at frozen parameters are forced to zero.

    The walk stops as soon as no trainable parameters remain below, so a
    fully frozen backbone costs nothing on the backward pass."""
    views = net.views()
    grad = np.zeros(net.n_params, dtype=net.params.dtype)
    grad_views = {}
    backbone_live = False
    offset = 0
    for key, group in net._layout:
        arrs = []
        start = offset
        for shape in group:
            size = int(np.prod(shape))
            arrs.append(grad[offset : offset + size].reshape(shape))
            offset += size
        grad_views[key] = arrs
        if key != "head" and (~net.frozen_mask[start:offset]).any():
            backbone_live = True

    kind, key, embedding = cache[-1]
    assert kind == "head"
    w, _ = views["head"]
    grad_views["head"][0][:] = embedding.T @ dlogits
    grad_views["head"][1][:] = dlogits.sum(axis=0)
    if not backbone_live:
        grad[net.frozen_mask] = 0.0
        return grad
    dh = dlogits @ w.T

    for kind, i, c in reversed(cache[:-1]):
        if kind == "conv":
            w, _ = views[i]
            dh, dw, db = _conv_backward(dh, c, w)
            grad_views[i][0][:] = dw
            grad_views[i][1][:] = db
        elif kind == "relu":
            dh = dh * c
        elif kind == "pool":
            dh = _pool_backward(dh, c)
        elif kind == "gap":
            bsz, ch, h, wd = c
            dh = np.broadcast_to(dh[:, :, None, None] / (h * wd), c).astype(dh.dtype)
        elif kind == "patchflatten":
            dh = _patchflatten_backward(dh, c)
        elif kind == "dense":
            x_in = c
            w, _ = views[i]
            grad_views[i][0][:] = x_in.T @ dh
            grad_views[i][1][:] = dh.sum(axis=0)
            dh = dh @ w.T

    grad[net.frozen_mask] = 0.0
    return grad


def activate(logits: np.ndarray, kind: str) -> np.ndarray:
    """Softmax rows or elementwise sigmoid, numerically stable."""
    logits = np.asarray(logits, dtype=np.float64)
    if kind == "softmax":
        z = logits - logits.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)
    if kind == "sigmoid":
        out = np.empty_like(logits)
        pos = logits >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-logits[pos]))
        ez = np.exp(logits[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    raise ConfigError(f"unknown activation {kind!r}")


def freeze(net: Network, selector: str) -> Network:
    """'backbone' freezes everything except the head; 'none' unfreezes all."""
    if selector == "backbone":
        net.frozen_mask[:] = True
        net.frozen_mask[net.head_slice()] = False
    elif selector == "none":
        net.frozen_mask[:] = False
    else:
        raise ConfigError(f"unknown freeze selector {selector!r}")
    return net


def trainable_count(net: Network) -> int:
    return int((~net.frozen_mask).sum())


# ---------------------------------------------------------------------------
# Architectures
# ---------------------------------------------------------------------------

def _conv_backbone(channels, pool="max"):
    layers = []
    for ch in channels:
        layers += [Conv2D(ch, kernel=3, stride=1), ReLU(), Pool2D(2, pool)]
    layers.append(GlobalAvgPool())
    return tuple(layers)


def make_spec(name: str, input_shape, n_classes, activation="softmax", **sizes) -> NetworkSpec:
    """Named architecture families with configurable sizes.

    teacher: 4 conv blocks, default channels (16, 32, 64, 64)
    student_a: 2 conv blocks, default channels (8, 16)
    student_b: patch-flatten + 2-layer MLP (a different inductive bias)
    """
    if name == "teacher":
        channels = tuple(sizes.get("channels", (16, 32, 64, 64)))
        backbone = _conv_backbone(channels, sizes.get("pool", "max"))
    elif name == "student_a":
        channels = tuple(sizes.get("channels", (8, 16)))
        backbone = _conv_backbone(channels, sizes.get("pool", "max"))
    elif name == "student_b":
        h, w = input_shape
        ph = sizes.get("patch_h", max(1, h // 4))
        pw = sizes.get("patch_w", max(1, w // 10))
        hidden = sizes.get("hidden", 64)
        embedding = sizes.get("embedding", 64)
        backbone = (
            PatchFlatten(ph, pw),
            Dense(hidden),
            ReLU(),
            Dense(embedding),
            ReLU(),
        )
    else:
        raise ConfigError(f"unknown architecture {name!r}")
    return NetworkSpec(tuple(input_shape), backbone, n_classes, activation)


ARCHITECTURES = ("teacher", "student_a", "student_b")


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path: str, net: Network, vocab_names, meta: dict = None) -> None:
    """magic | u32 json length | json (spec+vocab+meta) | u64 n | f32 blob | sha256."""
    doc = {
        "spec": net.spec.to_dict(),
        "vocab": list(vocab_names),
        "meta": meta or {},
    }
    payload = json.dumps(doc, sort_keys=True).encode("utf-8")
    blob = net.params.astype("<f4").tobytes()
    body = (
        CHECKPOINT_MAGIC
        + struct.pack("<I", len(payload))
        + payload
        + struct.pack("<Q", net.n_params)
        + blob
    )
    digest = hashlib.sha256(body).digest()
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(digest)


def load_checkpoint(path: str, expect_spec: NetworkSpec = None):
    """Returns (Network, vocab list, meta dict); verifies checksum and,
    when expect_spec is given, rejects a mismatched architecture."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(CHECKPOINT_MAGIC) + 4 + 8 + 32:
        raise CheckpointError(f"{path}: truncated checkpoint")
    if data[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch")
    pos = len(CHECKPOINT_MAGIC)
    (json_len,) = struct.unpack_from("<I", body, pos)
    pos += 4
    doc = json.loads(body[pos : pos + json_len].decode("utf-8"))
    pos += json_len
    (n,) = struct.unpack_from("<Q", body, pos)
    pos += 8
    params = np.frombuffer(body, dtype="<f4", count=n, offset=pos).copy()
    spec = NetworkSpec.from_dict(doc["spec"])
    if expect_spec is not None and spec != expect_spec:
        raise CheckpointError(f"{path}: checkpoint spec does not match the expected spec")
    net = Network(spec, params=params)
    return net, doc["vocab"], doc["meta"]
