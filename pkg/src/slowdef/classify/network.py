"""A small convolutional network in plain numpy.

Activations are NHWC. Every layer implements ``forward(x)`` (caching what the
backward pass needs) and ``backward(dout)`` (returning the input gradient and
filling ``grads`` in the same order as ``params``).
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError, FormatError

PATCH_SIZE = 224
REFERENCE_ARCHITECTURE = (
    "input=224x224x1;conv3x3x8;relu;maxpool4;conv3x3x16;relu;maxpool4;"
    "conv3x3x32;relu;maxpool2;flatten;fc64;relu;fc2;softmax"
)
MODEL_MAGIC = b"CLF1"


class Conv3x3:
    """3x3 convolution, stride 1, zero 'same' padding."""

    def __init__(self, in_ch, out_ch):
        self.in_ch, self.out_ch = in_ch, out_ch
        self.params = [np.zeros((3, 3, in_ch, out_ch)), np.zeros(out_ch)]
        self.grads = [None, None]
        self.needs_input_grad = True

    def init(self, rng, dtype):
        fan_in = 9 * self.in_ch
        self.params = [
            (rng.standard_normal((3, 3, self.in_ch, self.out_ch)) * np.sqrt(2.0 / fan_in)).astype(dtype),
            np.zeros(self.out_ch, dtype=dtype),
        ]

    def forward(self, x):
        w, b = self.params
        n, h, wd, _ = x.shape
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
        if self.in_ch == 1:
            # im2col is cheapest for the single-channel input layer
            cols = np.lib.stride_tricks.sliding_window_view(xp[..., 0], (3, 3), axis=(1, 2))
            self._cols = cols.reshape(-1, 9)
            self._xp = None
            out = self._cols @ w.reshape(9, self.out_ch) + b
            return out.reshape(n, h, wd, self.out_ch)
        self._xp, self._cols = xp, None
        out = np.empty((n, h, wd, self.out_ch), dtype=x.dtype)
        out[...] = b
        for i in range(3):
            for j in range(3):
                out += xp[:, i:i + h, j:j + wd, :] @ w[i, j]
        return out

    def backward(self, dout):
        w, _ = self.params
        xp = self._xp
        n, h, wd, _ = dout.shape
        dflat = dout.reshape(-1, self.out_ch)
        if self._cols is not None:
            self.grads = [(self._cols.T @ dflat).reshape(w.shape), dflat.sum(axis=0)]
            if not self.needs_input_grad:
                return None
            dcols = (dflat @ w.reshape(9, self.out_ch).T).reshape(n, h, wd, 3, 3)
            dxp = np.zeros((n, h + 2, wd + 2, 1), dtype=dout.dtype)
            for i in range(3):
                for j in range(3):
                    dxp[:, i:i + h, j:j + wd, 0] += dcols[:, :, :, i, j]
            return dxp[:, 1:-1, 1:-1, :]
        dw = np.empty_like(w)
        for i in range(3):
            for j in range(3):
                dw[i, j] = xp[:, i:i + h, j:j + wd, :].reshape(-1, self.in_ch).T @ dflat
        self.grads = [dw, dflat.sum(axis=0)]
        if not self.needs_input_grad:
            return None
        dxp = np.zeros_like(xp)
        for i in range(3):
            for j in range(3):
                dxp[:, i:i + h, j:j + wd, :] += dout @ w[i, j].T
        return dxp[:, 1:-1, 1:-1, :]


class ReLU:
    def __init__(self):
        self.params, self.grads = [], []

    def init(self, rng, dtype):
        pass

    def forward(self, x):
        self._pos = x > 0
        return np.maximum(x, 0)

    def backward(self, dout):
        return dout * self._pos


class MaxPool:
    """Non-overlapping k x k max pooling; the gradient goes to the first maximum."""

    def __init__(self, k):
        self.k = k
        self.params, self.grads = [], []

    def init(self, rng, dtype):
        pass

    def forward(self, x):
        n, h, w, c = x.shape
        k = self.k
        if h % k or w % k:
            raise DimensionError(f"maxpool{k} needs spatial dims divisible by {k}, got {h}x{w}")
        best = x[:, 0::k, 0::k, :].copy()
        idx = np.zeros(best.shape, dtype=np.int8)
        for t in range(1, k * k):
            a, b = divmod(t, k)
            v = x[:, a::k, b::k, :]
            upd = v > best
            np.copyto(best, v, where=upd)
            idx[upd] = t
        self._shape, self._idx = x.shape, idx
        return best

    def backward(self, dout):
        k = self.k
        dx = np.zeros(self._shape, dtype=dout.dtype)
        for t in range(k * k):
            a, b = divmod(t, k)
            dx[:, a::k, b::k, :] = np.where(self._idx == t, dout, 0)
        return dx


class Flatten:
    def __init__(self):
        self.params, self.grads = [], []

    def init(self, rng, dtype):
        pass

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class Dense:
    def __init__(self, n_in, n_out):
        self.n_in, self.n_out = n_in, n_out
        self.params = [np.zeros((n_in, n_out)), np.zeros(n_out)]
        self.grads = [None, None]

    def init(self, rng, dtype):
        self.params = [
            (rng.standard_normal((self.n_in, self.n_out)) * np.sqrt(2.0 / self.n_in)).astype(dtype),
            np.zeros(self.n_out, dtype=dtype),
        ]

    def forward(self, x):
        self._x = x
        return x @ self.params[0] + self.params[1]

    def backward(self, dout):
        self.grads = [self._x.T @ dout, dout.sum(axis=0)]
        return dout @ self.params[0].T


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def build_layers(descriptor: str):
    """Parse an architecture descriptor into (input_shape, layers)."""
    tokens = [t.strip() for t in descriptor.split(";") if t.strip()]
    if not tokens or not tokens[0].startswith("input="):
        raise FormatError(f"architecture descriptor must start with input=HxWxC: {descriptor!r}")
    m = re.fullmatch(r"input=(\d+)x(\d+)x(\d+)", tokens[0])
    if not m:
        raise FormatError(f"bad input token {tokens[0]!r}")
    h, w, c = (int(g) for g in m.groups())
    input_shape = (h, w, c)
    shape = [h, w, c]
    layers = []
    flat = None
    for tok in tokens[1:]:
        if m := re.fullmatch(r"conv3x3x(\d+)", tok):
            layers.append(Conv3x3(shape[2], int(m.group(1))))
            shape[2] = int(m.group(1))
        elif tok == "relu":
            layers.append(ReLU())
        elif m := re.fullmatch(r"maxpool(\d+)", tok):
            k = int(m.group(1))
            pool = MaxPool(k)
            if layers and isinstance(layers[-1], ReLU):
                # relu(maxpool(x)) == maxpool(relu(x)) exactly, and is 16x cheaper
                layers.insert(len(layers) - 1, pool)
            else:
                layers.append(pool)
            shape = [shape[0] // k, shape[1] // k, shape[2]]
        elif tok == "flatten":
            layers.append(Flatten())
            flat = shape[0] * shape[1] * shape[2]
        elif m := re.fullmatch(r"fc(\d+)", tok):
            if flat is None:
                raise FormatError("fc layer before flatten")
            layers.append(Dense(flat, int(m.group(1))))
            flat = int(m.group(1))
        elif tok == "softmax":
            if flat != 2:
                raise FormatError("softmax head must follow a 2-unit fc layer")
        else:
            raise FormatError(f"unknown layer token {tok!r}")
    if tokens[-1] != "softmax":
        raise FormatError("architecture must end with softmax")
    return input_shape, layers


@dataclass
class ClassifierModel:
    """Convolutional patch classifier; class 1 means deformation."""

    architecture: str = REFERENCE_ARCHITECTURE
    layers: list = field(default=None, repr=False)
    input_shape: tuple = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.layers is None:
            self.input_shape, self.layers = build_layers(self.architecture)
            if self.layers:
                first = self.layers[0]
                if isinstance(first, Conv3x3):
                    first.needs_input_grad = False

    @classmethod
    def initialize(cls, seed: int = 0, architecture: str = REFERENCE_ARCHITECTURE, dtype=np.float32):
        """He-scaled normal weights, zero biases."""
        model = cls(architecture)
        rng = np.random.default_rng(seed)
        for layer in model.layers:
            layer.init(rng, dtype)
        model.metadata["init_seed"] = seed
        return model

    @property
    def dtype(self):
        for p in self.parameters():
            return p.dtype
        return np.float64

    def parameters(self):
        return [p for layer in self.layers for p in layer.params]

    def gradients(self):
        return [g for layer in self.layers for g in layer.grads]

    def astype(self, dtype) -> "ClassifierModel":
        other = ClassifierModel(self.architecture, metadata=dict(self.metadata))
        for src, dst in zip(self.layers, other.layers):
            dst.params = [p.astype(dtype, copy=True) for p in src.params]
        return other

    def copy(self) -> "ClassifierModel":
        return self.astype(self.dtype)

    def _prepare(self, patches):
        x = np.asarray(patches)
        if x.ndim == 2:
            x = x[None]
        h, w, c = self.input_shape
        if x.shape[1:3] != (h, w):
            raise DimensionError(f"patch shape {x.shape[1:3]} != required {(h, w)}")
        if x.ndim == 3:
            x = x[..., None]
        return x.astype(self.dtype) / self.dtype.type(255.0)

    def logits(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def loss_and_grads(self, patches, labels):
        """Mean softmax cross-entropy; fills each layer's ``grads``."""
        x = self._prepare(patches)
        labels = np.asarray(labels, dtype=np.int64)
        logits = self.logits(x)
        probs = softmax(logits)
        n = len(labels)
        loss = -np.mean(np.log(np.maximum(probs[np.arange(n), labels], np.finfo(probs.dtype).tiny)))
        dlogits = probs.copy()
        dlogits[np.arange(n), labels] -= 1.0
        dlogits /= n
        d = dlogits
        for layer in reversed(self.layers):
            d = layer.backward(d)
            if d is None:
                break
        return float(loss), probs

    def predict_batch(self, patches, batch_size: int = 64):
        """Deformation probability for an (n, H, W) stack of 0..255 patches."""
        patches = np.asarray(patches)
        if patches.ndim == 2:
            patches = patches[None]
        out = np.empty(len(patches), dtype=np.float64)
        for start in range(0, len(patches), batch_size):
            x = self._prepare(patches[start:start + batch_size])
            out[start:start + len(x)] = softmax(self.logits(x).astype(np.float64))[:, 1]
        return out

    def predict(self, patch) -> float:
        return float(self.predict_batch(np.asarray(patch)[None])[0])


def save_model(model: ClassifierModel, path) -> None:
    """Write the CLF1 container: magic, length-prefixed descriptor, float32 tensors."""
    desc = model.architecture.encode("ascii")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", len(desc)))
        fh.write(desc)
        for p in model.parameters():
            fh.write(np.ascontiguousarray(p, dtype="<f4").tobytes())


def load_model(path) -> ClassifierModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MODEL_MAGIC:
        raise FormatError(f"magic: expected {MODEL_MAGIC!r}, got {data[:4]!r}")
    if len(data) < 8:
        raise FormatError("descriptor length: file truncated")
    (n,) = struct.unpack("<I", data[4:8])
    try:
        desc = data[8:8 + n].decode("ascii")
    except UnicodeDecodeError:
        raise FormatError("descriptor: not ASCII") from None
    model = ClassifierModel(desc)
    pos = 8 + n
    for layer in model.layers:
        new = []
        for p in layer.params:
            nbytes = p.size * 4
            if pos + nbytes > len(data):
                raise FormatError("parameters: file truncated")
            new.append(np.frombuffer(data[pos:pos + nbytes], dtype="<f4").reshape(p.shape).astype(np.float32))
            pos += nbytes
        layer.params = new
    if pos != len(data):
        raise FormatError(f"parameters: {len(data) - pos} trailing bytes")
    return model
