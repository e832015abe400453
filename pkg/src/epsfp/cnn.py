"""Six-block CNN with hand-written backpropagation.

Tensors are channels-last, ``(batch, height, width, channels)``. A 2 x W input
(EPS rows or standardised raw I/Q) enters as height 2 with one channel; the
first block's 2-row kernel collapses the height axis, after which every block
is a 1-D convolution along the width.

Convolutions carry no bias because the batch norm that follows removes it.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import NumericalError, ValidationError

N_BLOCKS = 6
N_FC = 3


@dataclass(frozen=True)
class CnnArchitecture:
    n_classes: int
    input_height: int = 2
    input_width: int = 4096
    channels: tuple[int, ...] = (8, 16, 32, 64, 64, 128)
    first_kernel: tuple[int, int] = (2, 7)
    kernel: tuple[int, int] = (1, 5)
    fc_widths: tuple[int, ...] = (512, 128)
    leaky_slope: float = 0.01
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "first_kernel", tuple(int(k) for k in self.first_kernel))
        object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
        object.__setattr__(self, "fc_widths", tuple(int(w) for w in self.fc_widths))
        if self.n_classes < 1:
            raise ValidationError("n_classes must be positive")
        if len(self.channels) != N_BLOCKS:
            raise ValidationError(f"architecture needs exactly {N_BLOCKS} conv blocks")
        if len(self.fc_widths) != N_FC - 1:
            raise ValidationError(f"architecture needs exactly {N_FC} fully-connected layers")
        if self.input_width % (2 ** N_BLOCKS):
            raise ValidationError(f"input_width must be divisible by {2 ** N_BLOCKS}")
        for kh, kw in (self.first_kernel, self.kernel):
            if kw % 2 == 0:
                raise ValidationError("kernel widths must be odd for same padding")
        if self.first_kernel[0] > self.input_height:
            raise ValidationError("first kernel is taller than the input")

    def block_kernels(self) -> list[tuple[int, int]]:
        return [self.first_kernel] + [self.kernel] * (N_BLOCKS - 1)

    def block_heights(self) -> list[int]:
        """Input height of each block followed by the final height."""
        hs = [self.input_height]
        for kh, _ in self.block_kernels():
            h = hs[-1] - kh + 1
            if h < 1:
                raise ValidationError("kernel heights collapse the input below one row")
            hs.append(h)
        return hs

    @property
    def flat_features(self) -> int:
        return self.block_heights()[-1] * (self.input_width >> N_BLOCKS) * self.channels[-1]

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {}
        cin = 1
        for b, ((kh, kw), cout) in enumerate(zip(self.block_kernels(), self.channels), start=1):
            shapes[f"conv{b}.w"] = (kh * kw * cin, cout)
            shapes[f"bn{b}.gamma"] = (cout,)
            shapes[f"bn{b}.beta"] = (cout,)
            cin = cout
        widths = (self.flat_features,) + self.fc_widths + (self.n_classes,)
        for i in range(N_FC):
            shapes[f"fc{i + 1}.w"] = (widths[i], widths[i + 1])
            shapes[f"fc{i + 1}.b"] = (widths[i + 1],)
        return shapes

    def state_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        for b, c in enumerate(self.channels, start=1):
            shapes[f"bn{b}.mean"] = (c,)
            shapes[f"bn{b}.var"] = (c,)
        return shapes

    def param_count(self) -> int:
        """Trainable parameters.

        ``sum_b kh_b kw_b c_{b-1} c_b + 2 sum_b c_b + sum_i (w_{i-1} + 1) w_i``
        with ``c_0 = 1``, ``w_0 = flat_features`` and ``w_3 = n_classes``.
        """
        return int(sum(np.prod(s) for s in self.param_shapes().values()))

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("channels", "first_kernel", "kernel", "fc_widths"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> CnnArchitecture:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown architecture keys: {sorted(unknown)}")
        return cls(**d)


def miniature(n_classes: int = 2, width: int = 64) -> CnnArchitecture:
    """Narrow copy of the default architecture for gradient checks and quick tests."""
    return CnnArchitecture(n_classes=n_classes, input_width=width, channels=(2, 3, 3, 4, 4, 4),
                           fc_widths=(6, 5))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 30
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    patience: int = 3
    min_rel_improvement: float = 0.01
    target_loss: float = 1e-3
    dtype: str = "float32"

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValidationError("learning_rate must be nonnegative")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be at least 1")
        if self.epochs < 0:
            raise ValidationError("epochs must be nonnegative")
        if self.dtype not in ("float32", "float64"):
            raise ValidationError("dtype must be float32 or float64")


@dataclass
class ModelParams:
    arch: CnnArchitecture
    params: dict[str, np.ndarray]
    state: dict[str, np.ndarray]
    training: bool = False

    def copy(self) -> ModelParams:
        return ModelParams(self.arch, {k: v.copy() for k, v in self.params.items()},
                           {k: v.copy() for k, v in self.state.items()}, self.training)

    def astype(self, dtype) -> ModelParams:
        return ModelParams(self.arch, {k: v.astype(dtype) for k, v in self.params.items()},
                           {k: v.astype(dtype) for k, v in self.state.items()}, self.training)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in (*self.params.values(), *self.state.values()))


def init_params(arch: CnnArchitecture, seed: int = 0, head_scale: float = 0.01) -> ModelParams:
    """Kaiming-uniform weights for the leaky slope, unit BN scale, zero shifts.

    The last layer is shrunk by ``head_scale`` so untrained logits are close to
    zero and the initial prediction is close to uniform.
    """
    rng = np.random.default_rng(seed)
    gain = np.sqrt(2.0 / (1.0 + arch.leaky_slope ** 2))
    params: dict[str, np.ndarray] = {}
    for name, shape in arch.param_shapes().items():
        if name.endswith(".w"):
            bound = gain * np.sqrt(3.0 / shape[0])
            w = rng.uniform(-bound, bound, size=shape)
            if name == f"fc{N_FC}.w":
                w *= head_scale
            params[name] = w
        elif name.endswith(".gamma"):
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    state = {n: (np.zeros(s) if n.endswith(".mean") else np.ones(s)) for n, s in arch.state_shapes().items()}
    return ModelParams(arch, params, state)


# layer primitives; each forward returns (output, cache)

def _im2col(xp, kh, kw, ho, wo):
    # columns are ordered (kernel row, kernel column, channel)
    n, c = xp.shape[0], xp.shape[-1]
    cols = np.empty((n, ho, wo, kh * kw * c), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            k = (i * kw + j) * c
            cols[..., k:k + c] = xp[:, i:i + ho, j:j + wo, :]
    return cols.reshape(-1, kh * kw * c)


def _conv_forward(x, w, kh, kw):
    """Height: valid. Width: same padding with an odd kernel."""
    n, h, width, c = x.shape
    pw = kw // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pw, pw), (0, 0)))
    cols = _im2col(xp, kh, kw, h - kh + 1, width)
    out = (cols @ w).reshape(n, h - kh + 1, width, w.shape[1])
    return out, (cols, x.shape, kh, kw)


def _conv_backward(dout, w, cache, need_dx=True):
    cols, xshape, kh, kw = cache
    n, h, width, c = xshape
    cout = w.shape[1]
    d2 = dout.reshape(-1, cout)
    dw = cols.T @ d2
    if not need_dx:
        return None, dw
    # the input gradient is a full correlation with the flipped kernel
    pw = kw // 2
    dp = np.pad(dout, ((0, 0), (kh - 1, kh - 1), (pw, pw), (0, 0)))
    wf = w.reshape(kh, kw, c, cout)[::-1, ::-1].transpose(0, 1, 3, 2).reshape(kh * kw * cout, c)
    return (_im2col(dp, kh, kw, h, width) @ wf).reshape(xshape), dw


def _bn_forward(x, gamma, beta, mean_run, var_run, training, eps, momentum):
    c = x.shape[-1]
    x2 = x.reshape(-1, c)
    m = x2.shape[0]
    if training:
        ones = np.ones(m, dtype=x.dtype)
        mu = (ones @ x2) / m
        xc = x2 - mu
        var = (ones @ (xc * xc)) / m
        mean_run *= 1.0 - momentum
        mean_run += momentum * mu
        var_run *= 1.0 - momentum
        var_run += momentum * var * (m / max(m - 1, 1))
    else:
        xc = x2 - mean_run.astype(x.dtype)
        var = var_run.astype(x.dtype)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return (xhat * gamma + beta).reshape(x.shape), (xhat, inv)


def _bn_backward(dout, gamma, cache):
    xhat, inv = cache
    d2 = dout.reshape(xhat.shape)
    m = d2.shape[0]
    ones = np.ones(m, dtype=d2.dtype)
    dbeta = ones @ d2
    dgamma = ones @ (d2 * xhat)
    dx = (gamma * inv) * (d2 - dbeta / m - xhat * (dgamma / m))
    return dx.reshape(dout.shape), dgamma, dbeta


def _leaky(x, slope):
    pos = x > 0
    return np.maximum(x, slope * x), pos


def _leaky_backward(dout, pos, slope):
    return dout * np.where(pos, dout.dtype.type(1), dout.dtype.type(slope))


def _pool_forward(x):
    n, h, width, c = x.shape
    xr = x.reshape(n, h, width // 2, 2, c)
    left, right = xr[:, :, :, 0, :], xr[:, :, :, 1, :]
    first = left >= right  # ties go to the left element
    return np.where(first, left, right), (first, x.shape)


def _pool_backward(dout, cache):
    first, shape = cache
    n, h, width, c = shape
    dxr = np.empty((n, h, width // 2, 2, c), dtype=dout.dtype)
    np.multiply(dout, first, out=dxr[:, :, :, 0, :])
    np.subtract(dout, dxr[:, :, :, 0, :], out=dxr[:, :, :, 1, :])
    return dxr.reshape(shape)


def _check(name, a):
    if not np.all(np.isfinite(a)):
        raise NumericalError(f"non-finite activation in layer {name}")


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _as_nhwc(x: np.ndarray, arch: CnnArchitecture, dtype) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 2:
        x = x[None]
    if x.shape[1:] != (arch.input_height, arch.input_width):
        raise ValidationError(
            f"input shape {x.shape[1:]} does not match ({arch.input_height}, {arch.input_width})")
    if not np.all(np.isfinite(x)):
        raise ValidationError("input contains non-finite values")
    return x.astype(dtype, copy=False)[..., None]


def forward_logits(mp: ModelParams, x: np.ndarray, training: bool | None = None, keep_cache: bool = False):
    """Logits for a batch ``(N, H, W)`` (or one ``(H, W)`` input).

    ``training`` defaults to ``mp.training``. In training mode batch statistics
    are used and the running BN estimates are updated in place.
    """
    a = mp.arch
    training = mp.training if training is None else training
    p, s = mp.params, mp.state
    dtype = p["conv1.w"].dtype
    h = _as_nhwc(x, a, dtype)
    caches = []
    for b, (kh, kw) in enumerate(a.block_kernels(), start=1):
        z, cc = _conv_forward(h, p[f"conv{b}.w"], kh, kw)
        z, cb = _bn_forward(z, p[f"bn{b}.gamma"], p[f"bn{b}.beta"], s[f"bn{b}.mean"], s[f"bn{b}.var"],
                            training, a.bn_eps, a.bn_momentum)
        # leaky ReLU is increasing, so pooling first gives the same result on half the data
        z, cp = _pool_forward(z)
        h, pos = _leaky(z, a.leaky_slope)
        _check(f"block{b}", h)
        caches.append((cc, cb, pos, cp))
    flat_shape = h.shape
    h = h.reshape(h.shape[0], -1)
    for i in range(1, N_FC + 1):
        inp = h
        h = inp @ p[f"fc{i}.w"] + p[f"fc{i}.b"]
        pos = None
        if i < N_FC:
            h, pos = _leaky(h, a.leaky_slope)
        _check(f"fc{i}", h)
        caches.append((inp, pos))
    if keep_cache:
        return h, (caches, flat_shape)
    return h


def backward(mp: ModelParams, cache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of every parameter given ``dL/dlogits`` and a forward cache."""
    a = mp.arch
    p = mp.params
    caches, flat_shape = cache
    grads: dict[str, np.ndarray] = {}
    d = dlogits.astype(p["conv1.w"].dtype, copy=False)
    for i in range(N_FC, 0, -1):
        inp, pos = caches[N_BLOCKS + i - 1]
        if pos is not None:
            d = _leaky_backward(d, pos, a.leaky_slope)
        grads[f"fc{i}.w"] = inp.T @ d
        grads[f"fc{i}.b"] = d.sum(axis=0)
        d = d @ p[f"fc{i}.w"].T
    d = d.reshape(flat_shape)
    for b in range(N_BLOCKS, 0, -1):
        cc, cb, pos, cp = caches[b - 1]
        d = _leaky_backward(d, pos, a.leaky_slope)
        d = _pool_backward(d, cp)
        d, grads[f"bn{b}.gamma"], grads[f"bn{b}.beta"] = _bn_backward(d, p[f"bn{b}.gamma"], cb)
        d, grads[f"conv{b}.w"] = _conv_backward(d, p[f"conv{b}.w"], cc, need_dx=b > 1)
    return grads


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the logits."""
    probs = softmax(logits)
    n = labels.size
    loss = -float(np.mean(np.log(probs[np.arange(n), labels] + 1e-300)))
    g = probs.copy()
    g[np.arange(n), labels] -= 1.0
    return loss, g / n


def loss_and_grads(mp: ModelParams, x, labels) -> tuple[float, dict[str, np.ndarray]]:
    labels = _check_labels(labels, mp.arch.n_classes)
    logits, cache = forward_logits(mp, x, training=True, keep_cache=True)
    loss, g = cross_entropy(logits, labels)
    return loss, backward(mp, cache, g)


def _check_labels(labels, n_classes):
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if labels.size == 0:
        raise ValidationError("batch is empty")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValidationError(f"labels must lie in [0, {n_classes})")
    return labels


def forward(mp: ModelParams, x: np.ndarray, batch_size: int = 128) -> np.ndarray:
    """Class probabilities (float64); eval mode unless ``mp.training``."""
    x = np.asarray(x)
    single = x.ndim == 2
    if single:
        x = x[None]
    out = [softmax(forward_logits(mp, x[i:i + batch_size])) for i in range(0, len(x), batch_size)]
    probs = np.concatenate(out) if out else np.empty((0, mp.arch.n_classes))
    return probs[0] if single else probs


def predict(mp: ModelParams, x: np.ndarray) -> tuple[int, float]:
    """Most probable class and its probability; ties go to the lowest index."""
    probs = forward(mp, x)
    k = int(np.argmax(probs))
    return k, float(probs[k])


def predict_batch(mp: ModelParams, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    probs = forward(mp, x)
    k = np.argmax(probs, axis=1)
    return k, probs[np.arange(len(k)), k]


@dataclass
class _Adam:
    cfg: TrainConfig
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    def step(self, params, grads):
        c = self.cfg
        self.t += 1
        b1t = 1.0 - c.beta1 ** self.t
        b2t = 1.0 - c.beta2 ** self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            m, v = self.m[k], self.v[k]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            if c.learning_rate:
                params[k] -= (c.learning_rate * (m / b1t) / (np.sqrt(v / b2t) + c.adam_eps)).astype(params[k].dtype)


@dataclass
class TrainResult:
    params: ModelParams
    epoch_losses: list[float]
    epoch_accuracies: list[float]


def train(x: np.ndarray, y: np.ndarray, arch: CnnArchitecture, cfg: TrainConfig = TrainConfig(),
          init: ModelParams | None = None, log=None) -> TrainResult:
    """Adam on mean cross-entropy with seeded per-epoch shuffling.

    Stops early when the epoch loss drops below ``cfg.target_loss`` or fails
    to improve by ``cfg.min_rel_improvement`` for ``cfg.patience`` epochs.
    """
    x = np.asarray(x)
    y = _check_labels(y, arch.n_classes) if len(y) else None
    if y is None or len(x) == 0:
        raise ValidationError("training set is empty")
    if len(x) != len(y):
        raise ValidationError("inputs and labels differ in length")
    dtype = np.dtype(cfg.dtype)
    mp = (init.copy() if init is not None else init_params(arch, cfg.seed)).astype(dtype)
    mp.training = True
    xs = x.astype(dtype, copy=False)
    rng = np.random.default_rng(cfg.seed + 1)
    opt = _Adam(cfg)
    losses, accs = [], []
    best, stale = np.inf, 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(xs))
        total, correct = 0.0, 0
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            logits, cache = forward_logits(mp, xs[idx], training=True, keep_cache=True)
            loss, g = cross_entropy(logits, y[idx])
            if not np.isfinite(loss):
                raise NumericalError(f"loss became non-finite in epoch {epoch}")
            total += loss * len(idx)
            correct += int(np.sum(np.argmax(logits, axis=1) == y[idx]))
            opt.step(mp.params, backward(mp, cache, g))
        losses.append(total / len(xs))
        accs.append(correct / len(xs))
        if log is not None:
            log(f"epoch {epoch + 1}: loss {losses[-1]:.4f} acc {accs[-1]:.3f}")
        if losses[-1] < cfg.target_loss:
            break
        if losses[-1] < best * (1.0 - cfg.min_rel_improvement):
            best, stale = losses[-1], 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    mp.training = False
    return TrainResult(mp, losses, accs)


# checkpoints

CKPT_MAGIC = b"EPSM"
CKPT_VERSION = 1


def save_checkpoint(path: str | Path, mp: ModelParams) -> None:
    """Binary checkpoint: magic, version, JSON architecture, then named f64 tensors."""
    buf = io.BytesIO()
    arch_json = json.dumps(mp.arch.to_dict(), sort_keys=True).encode()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<II", CKPT_VERSION, len(arch_json)))
    buf.write(arch_json)
    tensors = [(k, mp.params[k]) for k in mp.arch.param_shapes()] + \
              [(k, mp.state[k]) for k in mp.arch.state_shapes()]
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        nb = name.encode()
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: str | Path) -> ModelParams:
    from .errors import DatasetFormatError

    data = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise DatasetFormatError("checkpoint truncated", pos)
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take(4) != CKPT_MAGIC:
        raise DatasetFormatError("bad checkpoint magic", 0)
    version, alen = struct.unpack("<II", take(8))
    if version != CKPT_VERSION:
        raise DatasetFormatError(f"unsupported checkpoint version {version}", 4)
    arch = CnnArchitecture.from_dict(json.loads(take(alen)))
    pshapes, sshapes = arch.param_shapes(), arch.state_shapes()
    (count,) = struct.unpack("<I", take(4))
    params, state = {}, {}
    for _ in range(count):
        start = pos
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode()
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        expected = pshapes.get(name, sshapes.get(name))
        if expected is None or tuple(shape) != tuple(expected):
            raise DatasetFormatError(f"tensor {name!r} has shape {shape}, architecture expects {expected}",
                                     start)
        arr = np.frombuffer(take(8 * int(np.prod(shape))), dtype="<f8").reshape(shape).copy()
        (params if name in pshapes else state)[name] = arr
    if set(params) != set(pshapes) or set(state) != set(sshapes):
        raise DatasetFormatError("checkpoint is missing tensors", pos)
    if pos != len(data):
        raise DatasetFormatError("trailing bytes after last tensor", pos)
    return ModelParams(arch, params, state)
