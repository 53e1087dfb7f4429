"""From-scratch CNN: tensor ops, the two-channel classifier, and training.

Everything runs on numpy.  float32 is the working precision; float64 mode
exists for finite-difference gradient checks.  The network has twin
convolutional stages for the depth crop (channel A) and the gripper segment
image (channel B), merged by channel concatenation after stage 2.
"""

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, ParamFileError

_MAGIC = b"BPNN"
_VERSION = 1


# ---------------------------------------------------------------------------
# primitive ops (all take/return (N, C, H, W) or (N, F) arrays)

def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(dout, x):
    # gradient convention: 0 at exactly x == 0
    return dout * (x > 0.0)


def softmax(a):
    """Row-wise softmax with max-subtraction; a is (N, K) or (K,)."""
    a = np.asarray(a, dtype=float)
    one = a.ndim == 1
    if one:
        a = a[None, :]
    z = a - a.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)
    return y[0] if one else y


def cross_entropy(probs, labels, eps=1e-12):
    """Mean negative log-likelihood; labels are integer class indices."""
    n = probs.shape[0]
    return float(-np.log(probs[np.arange(n), labels] + eps).mean())


def im2col(x, kh, kw, stride):
    """(N, C, H, W) -> (N, out_h, out_w, C*kh*kw) patch matrix (valid)."""
    n, c, h, w = x.shape
    out_h = (h - kh) // stride + 1
    out_w = (w - kw) // stride + 1
    s0, s1, s2, s3 = x.strides
    shape = (n, c, out_h, out_w, kh, kw)
    strides = (s0, s1, s2 * stride, s3 * stride, s2, s3)
    patches = np.lib.stride_tricks.as_strided(x, shape=shape, strides=strides)
    # (N, out_h, out_w, C, kh, kw)
    return patches.transpose(0, 2, 3, 1, 4, 5).reshape(n, out_h, out_w, c * kh * kw)


def col2im(dcols, x_shape, kh, kw, stride):
    """Adjoint of im2col: scatter patch gradients back to the input."""
    n, c, h, w = x_shape
    out_h = (h - kh) // stride + 1
    out_w = (w - kw) // stride + 1
    dx = np.zeros(x_shape, dtype=dcols.dtype)
    d = dcols.reshape(n, out_h, out_w, c, kh, kw)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i:i + out_h * stride:stride, j:j + out_w * stride:stride] += \
                d[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dx


def conv2d_forward(x, weights, bias, stride=1):
    """Valid cross-correlation.  weights: (F, C, kh, kw), bias: (F,).

    Returns (out, cache) with out (N, F, out_h, out_w).
    """
    f, c, kh, kw = weights.shape
    if x.shape[2] < kh or x.shape[3] < kw:
        raise ValueError(f"input {x.shape[2:]} smaller than filter {(kh, kw)}")
    cols = im2col(x, kh, kw, stride)
    out = cols @ weights.reshape(f, -1).T + bias
    out = out.transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), (x.shape, cols, weights, stride)


def conv2d_backward(dout, cache):
    x_shape, cols, weights, stride = cache
    f, c, kh, kw = weights.shape
    dflat = dout.transpose(0, 2, 3, 1)  # (N, oh, ow, F)
    dw = np.tensordot(dflat, cols, axes=([0, 1, 2], [0, 1, 2])).reshape(weights.shape)
    db = dflat.sum(axis=(0, 1, 2))
    dcols = dflat @ weights.reshape(f, -1)
    dx = col2im(dcols, x_shape, kh, kw, stride)
    return dx, dw, db


def _pad_replicate_odd(x):
    """Replicate the last row/column so both spatial dims are even."""
    n, c, h, w = x.shape
    if h % 2:
        x = np.concatenate([x, x[:, :, -1:, :]], axis=2)
    if w % 2:
        x = np.concatenate([x, x[:, :, :, -1:]], axis=3)
    return x


def maxpool2_forward(x):
    """2x2 max pooling, stride 2; odd dims are replication-padded first."""
    xp = _pad_replicate_odd(x)
    n, c, h, w = xp.shape
    r = xp.reshape(n, c, h // 2, 2, w // 2, 2)
    windows = r.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    arg = windows.argmax(axis=-1)  # first-index tie-break via argmax
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]
    return out, (x.shape, xp.shape, arg)


def maxpool2_backward(dout, cache):
    x_shape, xp_shape, arg = cache
    n, c, h, w = xp_shape
    dwin = np.zeros((n, c, h // 2, w // 2, 4), dtype=dout.dtype)
    np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=-1)
    dxp = dwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5) \
              .reshape(n, c, h, w)
    # fold replicated row/col gradients back onto the true last row/col
    hh, ww = x_shape[2], x_shape[3]
    if h > hh:
        dxp[:, :, hh - 1, :] += dxp[:, :, hh, :]
    if w > ww:
        dxp[:, :, :, ww - 1] += dxp[:, :, :, ww]
    return np.ascontiguousarray(dxp[:, :, :hh, :ww])


def dense_forward(x, weights, bias):
    return x @ weights + bias, (x, weights)


def dense_backward(dout, cache):
    x, weights = cache
    return dout @ weights.T, x.T @ dout, dout.sum(axis=0)


def dropout_forward(x, rate, rng, train):
    """Inverted dropout: scaled at train time, identity at inference."""
    if not train or rate <= 0.0:
        return x, None
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    mask = mask.astype(x.dtype)
    return x * mask, mask


def dropout_backward(dout, mask):
    return dout if mask is None else dout * mask


def softmax_cross_entropy(logits, labels):
    """Loss and gradient w.r.t. logits in one pass."""
    probs = softmax(logits)
    loss = cross_entropy(probs, labels)
    n = logits.shape[0]
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    return loss, dlogits / n, probs


# ---------------------------------------------------------------------------
# network

@dataclass
class NetConfig:
    crop_size: int = 64
    filters: tuple = (8, 4, 3, 3)
    strides: tuple = (2, 1, 1, 1)
    pools: tuple = (True, True, False, False)
    channels: tuple = (8, 16, 16, 16)
    fc_sizes: tuple = (128, 128, 2)
    dropout: float = 0.5
    seed: int = 0
    dtype: str = "float32"

    @classmethod
    def full_scale(cls, seed=0):
        return cls(crop_size=250, filters=(16, 8, 5, 3), strides=(2, 2, 1, 1),
                   pools=(True, True, True, True), channels=(32, 64, 128, 128),
                   fc_sizes=(1024, 1024, 2), seed=seed)

    def layer_specs(self):
        """Flat structural description; hashed into the parameter-file fingerprint."""
        specs = []
        for i in range(4):
            twin = "ab" if i < 2 else "shared"
            specs.append({"kind": "conv", "stage": i + 1, "twin": twin,
                          "filter": self.filters[i], "stride": self.strides[i],
                          "out_channels": self.channels[i], "pool": self.pools[i]})
        for i, size in enumerate(self.fc_sizes):
            specs.append({"kind": "fc", "index": i + 1, "out": size,
                          "dropout": self.dropout if i < len(self.fc_sizes) - 1 else 0.0})
        specs.append({"kind": "softmax", "classes": self.fc_sizes[-1]})
        return specs

    def fingerprint(self):
        blob = json.dumps([self.crop_size] + self.layer_specs(),
                          sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _he_uniform(rng, shape, fan_in, dtype):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Network:
    """Two-channel success-rate classifier.

    Channel A sees the normalized depth crop, channel B the gripper segment
    image; stages 1-2 run as independent twins, their outputs are
    concatenated channel-wise, and stages 3-4 plus the FC head are shared.
    """

    def __init__(self, config=None):
        self.config = config or NetConfig()
        cfg = self.config
        if cfg.fc_sizes[-1] != 2:
            raise ValueError("final layer must have 2 outputs")
        self.dtype = np.dtype(cfg.dtype)
        rng = np.random.default_rng(cfg.seed)
        self.params = {}
        self._drop_rng = np.random.default_rng(cfg.seed + 1)

        def add_conv(name, in_ch, out_ch, k):
            fan = in_ch * k * k
            self.params[name + ".w"] = _he_uniform(rng, (out_ch, in_ch, k, k), fan, self.dtype)
            self.params[name + ".b"] = np.zeros(out_ch, dtype=self.dtype)

        # twin stages
        for side in ("a", "b"):
            add_conv(f"conv1{side}", 1, cfg.channels[0], cfg.filters[0])
            add_conv(f"conv2{side}", cfg.channels[0], cfg.channels[1], cfg.filters[1])
        add_conv("conv3", 2 * cfg.channels[1], cfg.channels[2], cfg.filters[2])
        add_conv("conv4", cfg.channels[2], cfg.channels[3], cfg.filters[3])

        flat = self._conv_out_elems()
        sizes = [flat] + list(cfg.fc_sizes)
        for i in range(len(cfg.fc_sizes)):
            self.params[f"fc{i + 1}.w"] = _he_uniform(
                rng, (sizes[i], sizes[i + 1]), sizes[i], self.dtype)
            self.params[f"fc{i + 1}.b"] = np.zeros(sizes[i + 1], dtype=self.dtype)
        self.param_names = sorted(self.params)

    def _stage_out(self, size, stage):
        cfg = self.config
        size = (size - cfg.filters[stage]) // cfg.strides[stage] + 1
        if size < 1:
            raise ValueError(f"conv stage {stage + 1} output collapsed")
        if cfg.pools[stage]:
            size = (size + 1) // 2
        return size

    def _conv_out_elems(self):
        size = self.config.crop_size
        for stage in range(4):
            size = self._stage_out(size, stage)
        return size * size * self.config.channels[3]

    def astype(self, dtype):
        """Switch working precision in place (float64 for gradient checks)."""
        self.dtype = np.dtype(dtype)
        for k in self.params:
            self.params[k] = self.params[k].astype(self.dtype)
        return self

    def forward(self, depth, grip, train=False, want_cache=False):
        """depth/grip: (N, H, W) or (H, W); returns (N, 2) probabilities."""
        cfg = self.config
        depth = np.asarray(depth, dtype=self.dtype)
        grip = np.asarray(grip, dtype=self.dtype)
        single = depth.ndim == 2
        if single:
            depth, grip = depth[None], grip[None]
        cache = {"single": single}
        xs = {"a": depth[:, None], "b": grip[:, None]}
        for side in ("a", "b"):
            x = xs[side]
            for stage in (1, 2):
                name = f"conv{stage}{side}"
                x, cache[name] = conv2d_forward(
                    x, self.params[name + ".w"], self.params[name + ".b"],
                    cfg.strides[stage - 1])
                cache[name + ".pre"] = x
                x = relu(x)
                if cfg.pools[stage - 1]:
                    x, cache[name + ".pool"] = maxpool2_forward(x)
            xs[side] = x
        x = np.concatenate([xs["a"], xs["b"]], axis=1)
        for stage in (3, 4):
            name = f"conv{stage}"
            x, cache[name] = conv2d_forward(
                x, self.params[name + ".w"], self.params[name + ".b"],
                cfg.strides[stage - 1])
            cache[name + ".pre"] = x
            x = relu(x)
            if cfg.pools[stage - 1]:
                x, cache[name + ".pool"] = maxpool2_forward(x)
        cache["flat_shape"] = x.shape
        x = x.reshape(x.shape[0], -1)
        nfc = len(cfg.fc_sizes)
        for i in range(1, nfc + 1):
            name = f"fc{i}"
            x, cache[name] = dense_forward(x, self.params[name + ".w"],
                                           self.params[name + ".b"])
            if i < nfc:
                cache[name + ".pre"] = x
                x = relu(x)
                x, cache[name + ".drop"] = dropout_forward(
                    x, cfg.dropout, self._drop_rng, train)
        cache["logits"] = x
        probs = softmax(x)
        if want_cache:
            return probs, cache
        return probs[0] if single else probs

    def loss_and_grads(self, depth, grip, labels, train=True):
        """Cross-entropy loss plus gradients for every parameter."""
        probs, cache = self.forward(depth, grip, train=train, want_cache=True)
        labels = np.asarray(labels)
        loss, dx, _ = softmax_cross_entropy(cache["logits"], labels)
        cfg = self.config
        grads = {}
        nfc = len(cfg.fc_sizes)
        dx = dx.astype(self.dtype)
        for i in range(nfc, 0, -1):
            name = f"fc{i}"
            if i < nfc:
                dx = dropout_backward(dx, cache[name + ".drop"])
                dx = relu_backward(dx, cache[name + ".pre"])
            dx, grads[name + ".w"], grads[name + ".b"] = dense_backward(dx, cache[name])
        dx = dx.reshape(cache["flat_shape"])
        for stage in (4, 3):
            name = f"conv{stage}"
            if cfg.pools[stage - 1]:
                dx = maxpool2_backward(dx, cache[name + ".pool"])
            dx = relu_backward(dx, cache[name + ".pre"])
            dx, grads[name + ".w"], grads[name + ".b"] = conv2d_backward(dx, cache[name])
        half = dx.shape[1] // 2
        dxs = {"a": dx[:, :half], "b": dx[:, half:]}
        for side in ("a", "b"):
            d = dxs[side]
            for stage in (2, 1):
                name = f"conv{stage}{side}"
                if cfg.pools[stage - 1]:
                    d = maxpool2_backward(d, cache[name + ".pool"])
                d = relu_backward(d, cache[name + ".pre"])
                d, grads[name + ".w"], grads[name + ".b"] = conv2d_backward(d, cache[name])
        return loss, grads, probs

    # -- persistence --------------------------------------------------------

    def save_params(self, path):
        fp = self.config.fingerprint().encode()
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<I", _VERSION))
            fh.write(struct.pack("<I", len(fp)))
            fh.write(fp)
            cfg_blob = json.dumps(self.config.__dict__, default=list).encode()
            fh.write(struct.pack("<I", len(cfg_blob)))
            fh.write(cfg_blob)
            for name in self.param_names:
                arr = np.ascontiguousarray(self.params[name], dtype=np.float32)
                fh.write(struct.pack("<I", len(name)))
                fh.write(name.encode())
                fh.write(struct.pack("<I", arr.ndim))
                fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
                fh.write(arr.tobytes())

    @classmethod
    def load_params(cls, path, config=None):
        try:
            with open(path, "rb") as fh:
                if fh.read(4) != _MAGIC:
                    raise ParamFileError("bad magic bytes")
                (version,) = struct.unpack("<I", fh.read(4))
                if version != _VERSION:
                    raise ParamFileError(f"unsupported version {version}")
                (n,) = struct.unpack("<I", fh.read(4))
                fp = fh.read(n).decode()
                (n,) = struct.unpack("<I", fh.read(4))
                cfg_dict = json.loads(fh.read(n).decode())
                for key in ("filters", "strides", "pools", "channels", "fc_sizes"):
                    cfg_dict[key] = tuple(cfg_dict[key])
                file_cfg = NetConfig(**cfg_dict)
                net_cfg = config or file_cfg
                if net_cfg.fingerprint() != fp:
                    raise ParamFileError("architecture fingerprint mismatch")
                net = cls(net_cfg)
                for _ in range(len(net.param_names)):
                    (n,) = struct.unpack("<I", fh.read(4))
                    name = fh.read(n).decode()
                    (ndim,) = struct.unpack("<I", fh.read(4))
                    shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
                    if name not in net.params or net.params[name].shape != shape:
                        raise ParamFileError(f"unexpected parameter {name} {shape}")
                    count = int(np.prod(shape))
                    buf = fh.read(4 * count)
                    if len(buf) != 4 * count:
                        raise ParamFileError("truncated parameter file")
                    net.params[name] = np.frombuffer(buf, dtype="<f4").reshape(shape) \
                                         .astype(net.dtype)
        except (struct.error, json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise ParamFileError(f"truncated parameter file: {exc}") from exc
        return net


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0

    def validate(self):
        if self.learning_rate < 0:
            raise ValueError("learning rate must be non-negative")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch size and epochs must be >= 1")


def train(net, train_set, config=None, verify_set=None, log=None):
    """Mini-batch SGD with momentum on cross-entropy.

    train_set/verify_set: (depth (N,H,W), grip (N,H,W), labels (N,)).
    Returns a history dict with per-epoch losses (and verify metrics when a
    verify split is given).
    """
    cfg = config or TrainConfig()
    cfg.validate()
    depth, grip, labels = (np.asarray(a) for a in train_set)
    n = len(labels)
    if n == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(cfg.seed)
    velocity = {k: np.zeros_like(v) for k, v in net.params.items()}
    history = {"loss": [], "verify_accuracy": []}
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads, _ = net.loss_and_grads(depth[idx], grip[idx], labels[idx])
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"loss became non-finite at epoch {epoch}, batch {start // cfg.batch_size}")
            losses.append(loss)
            for k in net.params:
                velocity[k] = cfg.momentum * velocity[k] - cfg.learning_rate * grads[k]
                net.params[k] = net.params[k] + velocity[k].astype(net.dtype)
        history["loss"].append(float(np.mean(losses)))
        if verify_set is not None:
            vd, vg, vl = verify_set
            acc = float((predict(net, vd, vg) == np.asarray(vl)).mean())
            history["verify_accuracy"].append(acc)
        if log is not None:
            msg = f"epoch {epoch + 1}/{cfg.epochs} loss {history['loss'][-1]:.4f}"
            if verify_set is not None:
                msg += f" verify_acc {history['verify_accuracy'][-1]:.3f}"
            log(msg)
    return history


def predict(net, depth, grip, batch_size=256):
    """Class predictions (argmax) over a batch."""
    out = []
    for start in range(0, len(depth), batch_size):
        probs = net.forward(depth[start:start + batch_size],
                            grip[start:start + batch_size])
        out.append(probs.argmax(axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=int)


def scores(net, depth, grip, batch_size=256):
    """Success probabilities y0 over a batch."""
    out = []
    for start in range(0, len(depth), batch_size):
        probs = net.forward(depth[start:start + batch_size],
                            grip[start:start + batch_size])
        out.append(probs[:, 0])
    return np.concatenate(out) if out else np.zeros(0)
