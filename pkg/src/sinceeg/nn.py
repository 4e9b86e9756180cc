"""Dense-tensor network stack with explicit forward/backward for every layer.

Tensors are plain float64 numpy arrays.  Each layer implements its own
backward pass (no autodiff tape): 2-D convolution, batch normalization,
max-pooling, ReLU, dropout, dense, softmax/cross-entropy, plus Glorot
initialization, the Adam optimizer, and the binary checkpoint format.

The pipeline assembled by :class:`EmotionNet` is: a filterbank front end
(learnable sinc band-passes, or free taps for the ablation baseline) whose
[batch, filters, time] output is treated as a one-channel 2-D map, three
conv-BN-ReLU-pool-dropout blocks, one fully connected ReLU layer with
dropout, and a linear projection to the four class logits.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import sincconv
from .errors import BadMagicError, TruncatedPayloadError, VersionMismatchError

CHECKPOINT_MAGIC = b"SNCK"
CHECKPOINT_VERSION = 1

# batch rows per im2col chunk; fixed so accumulation order (and therefore
# bit-level results) never depends on the machine
_CONV_CHUNK = 8
# above this many im2col elements per sample, route through FFT convolution
_FFT_THRESHOLD = 2 ** 24


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def glorot_uniform(shape, fan_in: int, fan_out: int,
                   rng: np.random.Generator) -> np.ndarray:
    """I.i.d. uniform on [-a, a] with a = sqrt(6 / (fan_in + fan_out))."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError("fans must be >= 1")
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


# ---------------------------------------------------------------------------
# functional ops (each returns what its backward needs)
# ---------------------------------------------------------------------------

def _pad_same(kh, kw):
    pt = (kh - 1) // 2
    pl = (kw - 1) // 2
    return pt, kh - 1 - pt, pl, kw - 1 - pl


def conv2d_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray):
    """Same-padded 2-D cross-correlation.

    x [B,C,H,W], kernel [O,C,kh,kw], bias [O] -> y [B,O,H,W] plus a cache for
    the backward pass.  Large problems fall back to FFT convolution; both
    paths agree with the direct sum to ~1e-12.
    """
    x = np.asarray(x, dtype=np.float64)
    B, C, H, W = x.shape
    O, Ck, kh, kw = kernel.shape
    if Ck != C:
        raise ValueError(f"kernel expects {Ck} input channels, got {C}")
    pt, pb, pl, pr = _pad_same(kh, kw)
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    if C * H * W * kh * kw > _FFT_THRESHOLD:
        y = _conv2d_fft(xp, kernel, (B, O, H, W))
    else:
        y = np.empty((B, O, H, W))
        kmat = kernel.reshape(O, C * kh * kw).T
        for s in range(0, B, _CONV_CHUNK):
            e = min(s + _CONV_CHUNK, B)
            win = sliding_window_view(xp[s:e], (kh, kw), axis=(2, 3))
            cols = win.transpose(0, 2, 3, 1, 4, 5).reshape((e - s) * H * W, C * kh * kw)
            y[s:e] = (cols @ kmat).reshape(e - s, H, W, O).transpose(0, 3, 1, 2)
    y += bias[None, :, None, None]
    cache = (x, xp, kernel, (pt, pb, pl, pr))
    return y, cache


def _conv2d_fft(xp, kernel, out_shape):
    from scipy.signal import fftconvolve
    B, O, H, W = out_shape
    kflip = kernel[:, :, ::-1, ::-1]
    y = np.empty(out_shape)
    for b in range(B):
        # [O,C,H,W] after 'valid' convolution of the padded input
        full = fftconvolve(xp[b][None, :, :, :], kflip, mode="valid", axes=(2, 3))
        y[b] = full.sum(axis=1)
    return y


def conv2d_backward(upstream: np.ndarray, cache):
    """Gradients (dx, dkernel, dbias) of conv2d_forward."""
    x, xp, kernel, (pt, pb, pl, pr) = cache
    B, C, H, W = x.shape
    O, _, kh, kw = kernel.shape
    u = np.asarray(upstream, dtype=np.float64)
    if u.shape != (B, O, H, W):
        raise ValueError(f"upstream shape {u.shape} != {(B, O, H, W)}")

    dbias = u.sum(axis=(0, 2, 3))

    if C * H * W * kh * kw > _FFT_THRESHOLD:
        return _conv2d_backward_fft(u, xp, kernel, (pt, pb, pl, pr), (B, C, H, W)) + (dbias,)

    dkernel = np.zeros_like(kernel)
    dx = np.empty_like(x)
    kflip_mat = kernel[:, :, ::-1, ::-1].transpose(0, 2, 3, 1).reshape(O * kh * kw, C)
    up = np.pad(u, ((0, 0), (0, 0), (kh - 1 - pt, pt), (kw - 1 - pl, pl)))
    for s in range(0, B, _CONV_CHUNK):
        e = min(s + _CONV_CHUNK, B)
        n = e - s
        win_x = sliding_window_view(xp[s:e], (kh, kw), axis=(2, 3))
        cols = win_x.transpose(0, 2, 3, 1, 4, 5).reshape(n * H * W, C * kh * kw)
        umat = u[s:e].transpose(1, 0, 2, 3).reshape(O, n * H * W)
        dkernel += (umat @ cols).reshape(O, C, kh, kw)
        win_u = sliding_window_view(up[s:e], (kh, kw), axis=(2, 3))
        ucols = win_u.transpose(0, 2, 3, 1, 4, 5).reshape(n * H * W, O * kh * kw)
        dx[s:e] = (ucols @ kflip_mat).reshape(n, H, W, C).transpose(0, 3, 1, 2)
    return dx, dkernel, dbias


def _conv2d_backward_fft(u, xp, kernel, pads, x_shape):
    from scipy.signal import fftconvolve
    pt, pb, pl, pr = pads
    B, C, H, W = x_shape
    O, _, kh, kw = kernel.shape
    dkernel = np.zeros_like(kernel)
    dx = np.empty(x_shape)
    uflip = u[:, :, ::-1, ::-1]
    for b in range(B):
        # dK[o,c,i,j] = sum_{h,w} u[b,o,h,w] * xp[b,c,h+i,w+j]
        dkernel += fftconvolve(xp[b][None, :, :, :], uflip[b][:, None, :, :],
                               mode="valid", axes=(2, 3))
        # dX[b,c,a,e] = sum_{o,i,j} K[o,c,i,j] * u[b,o,a+pt-i,e+pl-j]
        full = fftconvolve(u[b][:, None, :, :], kernel, mode="full", axes=(2, 3))
        dx[b] = full.sum(axis=0)[:, pt:pt + H, pl:pl + W]
    return dx, dkernel


def maxpool2d_forward(x: np.ndarray, pool_kh: int, pool_kw: int):
    """Non-overlapping max-pooling; short edges are padded with -inf.

    Returns the pooled tensor, the per-window argmax (first index wins ties),
    and a cache for backward.
    """
    B, C, H, W = x.shape
    if pool_kh > H or pool_kw > W:
        raise ValueError(f"pool size ({pool_kh},{pool_kw}) larger than input ({H},{W})")
    Ho = -(-H // pool_kh)
    Wo = -(-W // pool_kw)
    ph, pw = Ho * pool_kh - H, Wo * pool_kw - W
    xp = np.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)), constant_values=-np.inf)
    win = (xp.reshape(B, C, Ho, pool_kh, Wo, pool_kw)
             .transpose(0, 1, 2, 4, 3, 5)
             .reshape(B, C, Ho, Wo, pool_kh * pool_kw))
    arg = np.argmax(win, axis=-1)
    y = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    cache = (arg, (B, C, H, W), (Ho, Wo, pool_kh, pool_kw))
    return y, arg, cache


def maxpool2d_backward(upstream: np.ndarray, cache) -> np.ndarray:
    """Route each upstream value to its window's argmax position."""
    arg, (B, C, H, W), (Ho, Wo, pool_kh, pool_kw) = cache
    dwin = np.zeros((B, C, Ho, Wo, pool_kh * pool_kw))
    np.put_along_axis(dwin, arg[..., None], np.asarray(upstream)[..., None], axis=-1)
    dxp = (dwin.reshape(B, C, Ho, Wo, pool_kh, pool_kw)
               .transpose(0, 1, 2, 4, 3, 5)
               .reshape(B, C, Ho * pool_kh, Wo * pool_kw))
    return dxp[:, :, :H, :W]


def batchnorm_forward(x, gamma, beta, running_mean, running_var, *,
                      train: bool, momentum: float = 0.1, eps: float = 1e-5):
    """Per-channel standardization over (batch, H, W).

    Train mode normalizes by batch statistics and updates the running stats
    in place with the given momentum; eval mode uses the running stats.
    """
    B, C, H, W = x.shape
    if train:
        n = B * H * W
        if n < 2:
            raise ValueError("batch norm in train mode needs B*H*W >= 2 per channel")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        running_mean *= (1.0 - momentum)
        running_mean += momentum * mean
        running_var *= (1.0 - momentum)
        running_var += momentum * var
    else:
        mean = running_mean
        var = running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    y = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    cache = (xhat, inv_std, gamma, train, x.shape)
    return y, cache


def batchnorm_backward(upstream, cache):
    """Gradients (dx, dgamma, dbeta); train mode backpropagates through the
    batch statistics, eval mode treats them as constants."""
    xhat, inv_std, gamma, train, shape = cache
    B, C, H, W = shape
    u = np.asarray(upstream, dtype=np.float64)
    dgamma = np.sum(u * xhat, axis=(0, 2, 3))
    dbeta = u.sum(axis=(0, 2, 3))
    g = gamma[None, :, None, None] * inv_std[None, :, None, None]
    if not train:
        return u * g, dgamma, dbeta
    n = B * H * W
    sum_u = dbeta[None, :, None, None]
    sum_ux = dgamma[None, :, None, None]
    dx = g * (u - sum_u / n - xhat * sum_ux / n)
    return dx, dgamma, dbeta


def relu_forward(x):
    y = np.maximum(x, 0.0)
    return y, (x > 0.0)


def relu_backward(upstream, mask):
    return upstream * mask


def dropout_forward(x, rate: float, *, train: bool, rng: np.random.Generator | None):
    """Inverted dropout: survivors are scaled by 1/(1-rate) at train time."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x, None
    mask = rng.random(x.shape) >= rate
    return x * mask / (1.0 - rate), mask


def dropout_backward(upstream, mask, rate: float):
    if mask is None:
        return upstream
    return upstream * mask / (1.0 - rate)


def dense_forward(x, weight, bias):
    """Affine map: x [B,D] @ weight [D,K] + bias [K]."""
    if x.shape[1] != weight.shape[0]:
        raise ValueError(f"dense: input dim {x.shape[1]} != weight rows {weight.shape[0]}")
    return x @ weight + bias, x


def dense_backward(upstream, x, weight):
    dw = x.T @ upstream
    db = upstream.sum(axis=0)
    dx = upstream @ weight.T
    return dx, dw, db


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits.

    The softmax is stabilized by max subtraction; the gradient is
    (softmax - onehot) / batch.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    B, K = logits.shape
    if labels.shape != (B,):
        raise ValueError(f"labels shape {labels.shape} != ({B},)")
    if np.any(labels < 0) or np.any(labels >= K):
        raise ValueError("label out of range")
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    probs = ez / ez.sum(axis=1, keepdims=True)
    loss = -np.mean(np.log(probs[np.arange(B), labels]))
    grad = probs.copy()
    grad[np.arange(B), labels] -= 1.0
    grad /= B
    return loss, grad


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class Adam:
    """Adam with the L2 penalty folded into the gradient.

    The effective gradient is ``grad + weight_decay * param``; moments use
    the standard bias correction.  One ``step`` call advances the shared
    step counter exactly once.
    """

    def __init__(self, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=1e-5):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m: list[np.ndarray] = []
        self.v: list[np.ndarray] = []

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if len(params) != len(grads):
            raise ValueError("params and grads length mismatch")
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for i, (p, g) in enumerate(zip(params, grads)):
            if p.shape != g.shape:
                raise ValueError(f"param/grad shape mismatch at index {i}: "
                                 f"{p.shape} vs {g.shape}")
            eff = g + self.weight_decay * p
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * eff
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * eff * eff
            m_hat = self.m[i] / b1t
            v_hat = self.v[i] / b2t
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ---------------------------------------------------------------------------
# architecture
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ArchConfig:
    """Structural description of the network; everything a rebuild needs."""

    arch: str                      # "sincnet" | "cnn"
    sample_rate: float
    epoch_samples: int
    n_filters: int
    filter_kernel_len: int
    conv_channels: tuple[int, int, int]
    conv_kernels: tuple[tuple[int, int], ...]
    pool_sizes: tuple[tuple[int, int], ...]
    fc_units: int
    n_classes: int = 4
    dropout_rate: float = 0.5
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    min_band_hz: float = sincconv.DEFAULT_MIN_BAND_HZ

    def to_json_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json_dict(cls, d: dict) -> "ArchConfig":
        d = dict(d)
        d["conv_channels"] = tuple(d["conv_channels"])
        d["conv_kernels"] = tuple(tuple(k) for k in d["conv_kernels"])
        d["pool_sizes"] = tuple(tuple(p) for p in d["pool_sizes"])
        return cls(**d)


def pooled_map_shape(arch: ArchConfig) -> tuple[int, int]:
    """(H, W) of the feature map after the three pooling stages."""
    h, w = arch.n_filters, arch.epoch_samples
    for ph, pw in arch.pool_sizes:
        h = -(-h // ph)
        w = -(-w // pw)
    return h, w


class SincConvLayer:
    """Front end with learnable cut-off pairs (2 parameters per filter)."""

    name = "sinc"

    def __init__(self, arch: ArchConfig):
        self.bank = sincconv.Filterbank.spread_init(
            arch.n_filters, arch.filter_kernel_len, arch.sample_rate,
            min_band_hz=arch.min_band_hz)
        self.d_low = np.zeros(arch.n_filters)
        self.d_band = np.zeros(arch.n_filters)
        self._x = None

    def forward(self, x, train, rng):
        self._x = x
        return sincconv.sincconv_forward(x, self.bank)

    def backward(self, upstream):
        dx, dparams = sincconv.sincconv_backward(upstream, self._x, self.bank)
        self.d_low = dparams[:, 0]
        self.d_band = dparams[:, 1]
        return dx

    def params(self):
        return [("sinc.f_low_raw", self.bank.f_low_raw),
                ("sinc.band_raw", self.bank.band_raw)]

    def grads(self):
        return [self.d_low, self.d_band]

    def post_step_check(self):
        self.bank.check_ordering()


class FreeConvLayer:
    """Ablation front end: one free tap vector per filter, Glorot-initialized."""

    name = "conv1d"

    def __init__(self, arch: ArchConfig, rng: np.random.Generator):
        L = arch.filter_kernel_len
        self.kernels = glorot_uniform((arch.n_filters, L), fan_in=L,
                                      fan_out=arch.n_filters * L, rng=rng)
        self.d_kernels = np.zeros_like(self.kernels)
        self._x = None
        self._pl = (L - 1) // 2
        self._pr = L - 1 - self._pl

    def forward(self, x, train, rng):
        if x.shape[1] < self.kernels.shape[1]:
            raise ValueError("time length shorter than filter kernel")
        self._x = x
        return sincconv._corr1d_same(x, self.kernels, self._pl, self._pr)

    def backward(self, upstream):
        L = self.kernels.shape[1]
        up = np.pad(upstream, ((0, 0), (0, 0), (self._pr, self._pl)))
        win_u = sliding_window_view(up, L, axis=2)
        dx = np.einsum("bftl,fl->bt", win_u, self.kernels[:, ::-1], optimize=True)
        xp = np.pad(self._x, ((0, 0), (self._pl, self._pr)))
        win_x = sliding_window_view(xp, L, axis=1)
        self.d_kernels = np.einsum("bft,btl->fl", upstream, win_x, optimize=True)
        return dx

    def params(self):
        return [("conv1d.kernels", self.kernels)]

    def grads(self):
        return [self.d_kernels]

    def post_step_check(self):
        pass


class ConvBlock:
    """conv -> batch norm -> ReLU -> max-pool -> dropout."""

    def __init__(self, idx, in_ch, out_ch, kernel, pool, arch, rng):
        kh, kw = kernel
        self.idx = idx
        self.kernel = glorot_uniform((out_ch, in_ch, kh, kw),
                                     fan_in=in_ch * kh * kw,
                                     fan_out=out_ch * kh * kw, rng=rng)
        self.bias = np.zeros(out_ch)
        self.gamma = np.ones(out_ch)
        self.beta = np.zeros(out_ch)
        self.running_mean = np.zeros(out_ch)
        self.running_var = np.ones(out_ch)
        self.pool = pool
        self.arch = arch
        self.d_kernel = None
        self.d_bias = None
        self.d_gamma = None
        self.d_beta = None
        self._caches = None

    def forward(self, x, train, rng):
        y, conv_cache = conv2d_forward(x, self.kernel, self.bias)
        y, bn_cache = batchnorm_forward(y, self.gamma, self.beta,
                                        self.running_mean, self.running_var,
                                        train=train,
                                        momentum=self.arch.bn_momentum,
                                        eps=self.arch.bn_eps)
        y, relu_mask = relu_forward(y)
        y, _, pool_cache = maxpool2d_forward(y, *self.pool)
        y, drop_mask = dropout_forward(y, self.arch.dropout_rate,
                                       train=train, rng=rng)
        self._caches = (conv_cache, bn_cache, relu_mask, pool_cache, drop_mask)
        return y

    def backward(self, upstream):
        conv_cache, bn_cache, relu_mask, pool_cache, drop_mask = self._caches
        u = dropout_backward(upstream, drop_mask, self.arch.dropout_rate)
        u = maxpool2d_backward(u, pool_cache)
        u = relu_backward(u, relu_mask)
        u, self.d_gamma, self.d_beta = batchnorm_backward(u, bn_cache)
        dx, self.d_kernel, self.d_bias = conv2d_backward(u, conv_cache)
        return dx

    def params(self):
        p = f"conv{self.idx}"
        return [(f"{p}.kernel", self.kernel), (f"{p}.bias", self.bias),
                (f"{p}.bn_gamma", self.gamma), (f"{p}.bn_beta", self.beta)]

    def grads(self):
        return [self.d_kernel, self.d_bias, self.d_gamma, self.d_beta]

    def state(self):
        p = f"conv{self.idx}"
        return [(f"{p}.bn_running_mean", self.running_mean),
                (f"{p}.bn_running_var", self.running_var)]


class EmotionNet:
    """Four-class EEG sequence classifier with an interpretable front end."""

    def __init__(self, arch: ArchConfig, rng: np.random.Generator):
        self.arch = arch
        if arch.arch == "sincnet":
            self.front = SincConvLayer(arch)
        elif arch.arch == "cnn":
            self.front = FreeConvLayer(arch, rng)
        else:
            raise ValueError(f"unknown arch {arch.arch!r}")
        self.blocks = []
        in_ch = 1
        for i, (out_ch, kern, pool) in enumerate(
                zip(arch.conv_channels, arch.conv_kernels, arch.pool_sizes), start=1):
            self.blocks.append(ConvBlock(i, in_ch, out_ch, kern, pool, arch, rng))
            in_ch = out_ch
        h, w = pooled_map_shape(arch)
        self.flat_dim = arch.conv_channels[-1] * h * w
        self.fc_w = glorot_uniform((self.flat_dim, arch.fc_units),
                                   fan_in=self.flat_dim, fan_out=arch.fc_units, rng=rng)
        self.fc_b = np.zeros(arch.fc_units)
        self.out_w = glorot_uniform((arch.fc_units, arch.n_classes),
                                    fan_in=arch.fc_units, fan_out=arch.n_classes, rng=rng)
        self.out_b = np.zeros(arch.n_classes)
        self._cache = None
        self.d_fc_w = None
        self.d_fc_b = None
        self.d_out_w = None
        self.d_out_b = None

    def forward(self, x: np.ndarray, train: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        """x [B, time] -> logits [B, n_classes]."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.arch.epoch_samples:
            raise ValueError(f"expected input [B, {self.arch.epoch_samples}], "
                             f"got shape {x.shape}")
        if train and self.arch.dropout_rate > 0.0 and rng is None:
            raise ValueError("train-mode forward needs an rng for dropout")
        h = self.front.forward(x, train, rng)        # [B, F, T]
        h = h[:, None, :, :]                         # one-channel 2-D map
        for block in self.blocks:
            h = block.forward(h, train, rng)
        B = h.shape[0]
        flat_shape = h.shape
        h = h.reshape(B, -1)
        z1, fc_x = dense_forward(h, self.fc_w, self.fc_b)
        a1, relu_mask = relu_forward(z1)
        a1d, drop_mask = dropout_forward(a1, self.arch.dropout_rate,
                                         train=train, rng=rng)
        logits, out_x = dense_forward(a1d, self.out_w, self.out_b)
        self._cache = (flat_shape, fc_x, relu_mask, drop_mask, out_x)
        return logits

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        """Backpropagate the logit gradient; fills every layer's grads."""
        flat_shape, fc_x, relu_mask, drop_mask, out_x = self._cache
        u, self.d_out_w, self.d_out_b = dense_backward(dlogits, out_x, self.out_w)
        u = dropout_backward(u, drop_mask, self.arch.dropout_rate)
        u = relu_backward(u, relu_mask)
        u, self.d_fc_w, self.d_fc_b = dense_backward(u, fc_x, self.fc_w)
        u = u.reshape(flat_shape)
        for block in reversed(self.blocks):
            u = block.backward(u)
        u = u[:, 0, :, :]
        return self.front.backward(u)

    # parameter bookkeeping -------------------------------------------------

    def named_params(self) -> list[tuple[str, np.ndarray]]:
        out = list(self.front.params())
        for b in self.blocks:
            out.extend(b.params())
        out.extend([("fc.weight", self.fc_w), ("fc.bias", self.fc_b),
                    ("out.weight", self.out_w), ("out.bias", self.out_b)])
        return out

    def params(self) -> list[np.ndarray]:
        return [a for _, a in self.named_params()]

    def grads(self) -> list[np.ndarray]:
        out = list(self.front.grads())
        for b in self.blocks:
            out.extend(b.grads())
        out.extend([self.d_fc_w, self.d_fc_b, self.d_out_w, self.d_out_b])
        return out

    def state_tensors(self) -> list[tuple[str, np.ndarray]]:
        """Parameters plus non-learnable state, in declaration order."""
        out = self.named_params()
        for b in self.blocks:
            out.extend(b.state())
        return out

    def parameter_counts(self) -> list[tuple[str, int]]:
        return [(name, int(a.size)) for name, a in self.named_params()]

    def post_step_check(self):
        self.front.post_step_check()

    def set_param(self, name: str, value: np.ndarray):
        for n, arr in self.state_tensors():
            if n == name:
                if arr.shape != value.shape:
                    raise ValueError(f"shape mismatch for {name}")
                arr[...] = value
                return
        raise KeyError(name)


def zero_output_layer(model: EmotionNet):
    """Force uniform class probabilities by zeroing the final projection."""
    model.out_w[...] = 0.0
    model.out_b[...] = 0.0


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, model: EmotionNet, optimizer: Adam | None = None,
                    extra: dict | None = None) -> None:
    """Write model (and optimizer moment) tensors to the binary format.

    Layout: magic "SNCK", u32 format version, u32 header length, JSON header,
    then the tensors as little-endian float64 in header order.
    """
    tensors = list(model.state_tensors())
    if optimizer is not None and optimizer.m:
        for i, (name, _) in enumerate(model.named_params()):
            tensors.append((f"adam.m.{name}", optimizer.m[i]))
            tensors.append((f"adam.v.{name}", optimizer.v[i]))
    header = {
        "arch": model.arch.to_json_dict(),
        "step_count": optimizer.t if optimizer is not None else 0,
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in tensors],
    }
    if extra:
        header.update(extra)
    hjson = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(hjson)))
        f.write(hjson)
        for _, a in tensors:
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def _read_exact(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise TruncatedPayloadError(f"checkpoint truncated while reading {what}")
    return buf


def load_checkpoint(path):
    """Read a checkpoint; returns (header, {name: tensor})."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise BadMagicError(f"not a checkpoint file: magic {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise VersionMismatchError(f"checkpoint version {version}, "
                                       f"expected {CHECKPOINT_VERSION}")
        (hlen,) = struct.unpack("<I", _read_exact(f, 4, "header length"))
        header = json.loads(_read_exact(f, hlen, "header"))
        tensors = {}
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = _read_exact(f, count * 8, f"tensor {spec['name']}")
            tensors[spec["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
        trailing = f.read(1)
        if trailing:
            raise TruncatedPayloadError("checkpoint has trailing bytes past the payload")
    return header, tensors


def load_model(path) -> tuple[EmotionNet, Adam, dict]:
    """Rebuild a model (and optimizer moments) from a checkpoint file."""
    header, tensors = load_checkpoint(path)
    arch = ArchConfig.from_json_dict(header["arch"])
    model = EmotionNet(arch, np.random.default_rng(0))
    for name, _ in model.state_tensors():
        model.set_param(name, tensors[name])
    opt = Adam()
    opt.t = header.get("step_count", 0)
    names = [n for n, _ in model.named_params()]
    if all(f"adam.m.{n}" in tensors for n in names) and opt.t > 0:
        opt.m = [tensors[f"adam.m.{n}"].copy() for n in names]
        opt.v = [tensors[f"adam.v.{n}"].copy() for n in names]
    return model, opt, header
