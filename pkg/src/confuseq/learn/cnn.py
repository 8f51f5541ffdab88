"""1-D CNN with explicit forward/backward passes in numpy.

The gaze network takes 2 x 1000 traces through three Conv(k=5, pad=2) +
BatchNorm + ReLU + AvgPool(2) blocks (16, 32, 64 filters), a 8000 -> 128
linear layer with GELU, and a final linear to one logit: 1,037,553 trainable
parameters. The EEG variant reuses the stack with the channel count of the
selected electrode subset and window-length input.

Backward passes are exact (batch-norm differentiates through the batch
statistics in train mode), which lets tests pin every layer against central
finite differences.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from ..containers import MAGIC_CNN, read_container, write_container
from ..errors import DataError, NumericalError

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Conv1d:
    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 pad: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(in_channels * kernel)
        self.w = rng.uniform(-bound, bound, (out_channels, in_channels, kernel))
        self.b = rng.uniform(-bound, bound, out_channels)
        self.pad = pad
        self.params = ("w", "b")

    def spec(self):
        return ("conv", self.w.shape[1], self.w.shape[0], self.w.shape[2], self.pad)

    def param_count(self) -> int:
        return self.w.size + self.b.size

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        b, c, length = x.shape
        k = self.w.shape[2]
        xp = np.pad(x, ((0, 0), (0, 0), (self.pad, self.pad)))
        cols = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)
        # (B, C, L_out, k) -> (B, C*k, L_out)
        cols = np.ascontiguousarray(cols.transpose(0, 1, 3, 2)).reshape(
            b, c * k, -1)
        self._cols = cols
        self._in_shape = x.shape
        w2 = self.w.reshape(self.w.shape[0], -1)
        return np.matmul(w2, cols) + self.b[None, :, None]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        b, c, length = self._in_shape
        k = self.w.shape[2]
        w2 = self.w.reshape(self.w.shape[0], -1)
        self.g_b = dy.sum(axis=(0, 2))
        self.g_w = np.matmul(dy, self._cols.transpose(0, 2, 1)).sum(axis=0) \
            .reshape(self.w.shape)
        dcols = np.matmul(w2.T, dy).reshape(b, c, k, -1)
        dxp = np.zeros((b, c, length + 2 * self.pad))
        l_out = dy.shape[2]
        for kk in range(k):
            dxp[:, :, kk:kk + l_out] += dcols[:, :, kk, :]
        return dxp[:, :, self.pad:self.pad + length]


class BatchNorm1d:
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = np.ones(channels)
        self.beta = np.zeros(channels)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps
        self.params = ("gamma", "beta")

    def spec(self):
        return ("bn", len(self.gamma))

    def param_count(self) -> int:
        return self.gamma.size + self.beta.size

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        self._train = train
        if train:
            n = x.shape[0] * x.shape[2]
            mean = x.mean(axis=(0, 2))
            var = x.var(axis=(0, 2))
            self.running_mean = (1 - self.momentum) * self.running_mean \
                + self.momentum * mean
            unbias = n / (n - 1) if n > 1 else 1.0
            self.running_var = (1 - self.momentum) * self.running_var \
                + self.momentum * var * unbias
        else:
            mean, var = self.running_mean, self.running_var
        self._std = np.sqrt(var + self.eps)
        self._xhat = (x - mean[None, :, None]) / self._std[None, :, None]
        return self.gamma[None, :, None] * self._xhat + self.beta[None, :, None]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        self.g_gamma = (dy * self._xhat).sum(axis=(0, 2))
        self.g_beta = dy.sum(axis=(0, 2))
        dxhat = dy * self.gamma[None, :, None]
        if not self._train:
            return dxhat / self._std[None, :, None]
        n = dy.shape[0] * dy.shape[2]
        s1 = dxhat.sum(axis=(0, 2))[None, :, None]
        s2 = (dxhat * self._xhat).sum(axis=(0, 2))[None, :, None]
        return (dxhat - s1 / n - self._xhat * s2 / n) / self._std[None, :, None]


class ReLU:
    params = ()

    def spec(self):
        return ("relu",)

    def param_count(self) -> int:
        return 0

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return np.where(self._mask, dy, 0.0)


class AvgPool1d:
    params = ()

    def __init__(self, kernel: int = 2):
        self.kernel = kernel

    def spec(self):
        return ("pool", self.kernel)

    def param_count(self) -> int:
        return 0

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        b, c, length = x.shape
        if length % self.kernel:
            raise DataError(f"pool input length {length} not divisible by "
                            f"{self.kernel}")
        return x.reshape(b, c, length // self.kernel, self.kernel).mean(axis=3)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return np.repeat(dy, self.kernel, axis=2) / self.kernel


class Flatten:
    params = ()

    def spec(self):
        return ("flatten",)

    def param_count(self) -> int:
        return 0

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return dy.reshape(self._shape)


class Linear:
    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator):
        bound = 1.0 / np.sqrt(in_features)
        self.w = rng.uniform(-bound, bound, (out_features, in_features))
        self.b = rng.uniform(-bound, bound, out_features)
        self.params = ("w", "b")

    def spec(self):
        return ("linear", self.w.shape[1], self.w.shape[0])

    def param_count(self) -> int:
        return self.w.size + self.b.size

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        self._x = x
        return x @ self.w.T + self.b

    def backward(self, dy: np.ndarray) -> np.ndarray:
        self.g_w = dy.T @ self._x
        self.g_b = dy.sum(axis=0)
        return dy @ self.w


class GELU:
    params = ()

    def spec(self):
        return ("gelu",)

    def param_count(self) -> int:
        return 0

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        self._x = x
        self._cdf = 0.5 * (1.0 + erf(x / _SQRT2))
        return x * self._cdf

    def backward(self, dy: np.ndarray) -> np.ndarray:
        pdf = np.exp(-0.5 * self._x ** 2) * _INV_SQRT_2PI
        return dy * (self._cdf + self._x * pdf)


class CnnModel:
    """Sequential stack ending in a single logit per example."""

    def __init__(self, layers: list, in_channels: int, in_len: int, seed: int):
        self.layers = layers
        self.in_channels = in_channels
        self.in_len = in_len
        self.seed = seed

    def parameter_count(self) -> int:
        return sum(layer.param_count() for layer in self.layers)

    def layer_param_counts(self) -> list[int]:
        return [layer.param_count() for layer in self.layers
                if layer.param_count()]

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[1] != self.in_channels \
                or x.shape[2] != self.in_len:
            raise DataError(f"expected batch x {self.in_channels} x "
                            f"{self.in_len} input, got {x.shape}")
        for layer in self.layers:
            x = layer.forward(x, train)
        return x[:, 0]

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        grad = dlogits[:, None]
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def gradients(self):
        for li, layer in enumerate(self.layers):
            for name in layer.params:
                yield li, name, getattr(layer, name), getattr(layer, "g_" + name)


def build_cnn(in_channels: int, in_len: int, seed: int) -> CnnModel:
    """The published stack: 3 conv blocks (16/32/64, k=5, pad=2, pool 2),
    then flatten -> 128 with GELU -> 1 logit."""
    if in_len % 8:
        raise DataError("input length must be divisible by 8 (three 2x pools)")
    rng = np.random.default_rng(seed)
    flat = 64 * (in_len // 8)
    layers = [
        Conv1d(in_channels, 16, 5, 2, rng), BatchNorm1d(16), ReLU(), AvgPool1d(2),
        Conv1d(16, 32, 5, 2, rng), BatchNorm1d(32), ReLU(), AvgPool1d(2),
        Conv1d(32, 64, 5, 2, rng), BatchNorm1d(64), ReLU(), AvgPool1d(2),
        Flatten(), Linear(flat, 128, rng), GELU(), Linear(128, 1, rng),
    ]
    return CnnModel(layers, in_channels, in_len, seed)


def build_gaze_cnn(seed: int, trace_len: int = 1000) -> CnnModel:
    return build_cnn(2, trace_len, seed)


def bce_with_logits(logits: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross entropy on logits; returns (loss, dloss/dlogits)."""
    loss = float(np.mean(np.logaddexp(0.0, logits) - y * logits))
    p = _stable_sigmoid(logits)
    return loss, (p - y) / len(y)


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def step(self, model: CnnModel) -> None:
        self.t += 1
        for li, name, param, grad in model.gradients():
            key = (li, name)
            if key not in self.m:
                self.m[key] = np.zeros_like(param)
                self.v[key] = np.zeros_like(param)
            self.m[key] = self.beta1 * self.m[key] + (1 - self.beta1) * grad
            self.v[key] = self.beta2 * self.v[key] + (1 - self.beta2) * grad ** 2
            mhat = self.m[key] / (1 - self.beta1 ** self.t)
            vhat = self.v[key] / (1 - self.beta2 ** self.t)
            param -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def train_cnn(model: CnnModel, traces: np.ndarray, labels: np.ndarray,
              epochs: int = 100, lr: float = 1e-3, batch: int = 16,
              seed: int = 0, patience: int = 10) -> list[float]:
    """Adam + BCE training; deterministic given the seed. Returns the epoch
    loss curve. Stops early after `patience` epochs without improvement."""
    x = np.asarray(traces, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if len(np.unique(y)) < 2:
        raise DataError("CNN training needs both classes present")
    rng = np.random.default_rng(seed)
    opt = Adam(lr=lr)
    losses: list[float] = []
    best = np.inf
    stall = 0
    n = len(x)
    for _ in range(epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch):
            idx = perm[start:start + batch]
            logits = model.forward(x[idx], train=True)
            loss, dlogits = bce_with_logits(logits, y[idx])
            if not np.isfinite(loss):
                raise NumericalError(f"NaN/Inf training loss at step "
                                     f"{opt.t + 1}; last finite epoch losses: "
                                     f"{losses[-3:]}")
            model.backward(dlogits)
            opt.step(model)
            total += loss * len(idx)
        epoch_loss = total / n
        losses.append(epoch_loss)
        if epoch_loss < best - 1e-9:
            best = epoch_loss
            stall = 0
        else:
            stall += 1
            if stall >= patience:
                break
    return losses


def predict_cnn(model: CnnModel, traces: np.ndarray, batch: int = 64) -> np.ndarray:
    """Class-1 probabilities in eval mode (running batch-norm statistics)."""
    x = np.asarray(traces, dtype=np.float64)
    probs = np.empty(len(x))
    for start in range(0, len(x), batch):
        logits = model.forward(x[start:start + batch], train=False)
        probs[start:start + batch] = _stable_sigmoid(logits)
    return probs


def save_cnn(path, model: CnnModel) -> None:
    meta = {"kind": "cnn", "in_channels": model.in_channels,
            "in_len": model.in_len, "seed": model.seed,
            "arch": [list(layer.spec()) for layer in model.layers]}
    arrays: dict[str, np.ndarray] = {}
    for li, layer in enumerate(model.layers):
        for name in layer.params:
            arrays[f"L{li}_{name}"] = getattr(layer, name).astype(np.float32)
        if isinstance(layer, BatchNorm1d):
            arrays[f"L{li}_running_mean"] = layer.running_mean.astype(np.float32)
            arrays[f"L{li}_running_var"] = layer.running_var.astype(np.float32)
    write_container(path, MAGIC_CNN, meta, arrays)


def load_cnn(path) -> CnnModel:
    meta, arrays = read_container(path, MAGIC_CNN)
    if meta.get("kind") != "cnn":
        raise DataError(f"{path}: not a CNN model file")
    rng = np.random.default_rng(0)
    layers: list = []
    for spec in meta["arch"]:
        kind = spec[0]
        if kind == "conv":
            layers.append(Conv1d(spec[1], spec[2], spec[3], spec[4], rng))
        elif kind == "bn":
            layers.append(BatchNorm1d(spec[1]))
        elif kind == "relu":
            layers.append(ReLU())
        elif kind == "pool":
            layers.append(AvgPool1d(spec[1]))
        elif kind == "flatten":
            layers.append(Flatten())
        elif kind == "linear":
            layers.append(Linear(spec[1], spec[2], rng))
        elif kind == "gelu":
            layers.append(GELU())
        else:
            raise DataError(f"{path}: unknown layer kind {kind!r}")
    model = CnnModel(layers, meta["in_channels"], meta["in_len"], meta["seed"])
    for li, layer in enumerate(model.layers):
        for name in layer.params:
            setattr(layer, name, arrays[f"L{li}_{name}"].astype(np.float64))
        if isinstance(layer, BatchNorm1d):
            layer.running_mean = arrays[f"L{li}_running_mean"].astype(np.float64)
            layer.running_var = arrays[f"L{li}_running_var"].astype(np.float64)
    return model
