"""Layer kernels: convolution, batch norm, activations, pooling, linear, loss.

Every kernel has a vectorized numpy forward and a closure-based backward that
plugs into the tape in ``tensor``.  Three convolution strategies are used,
picked automatically by shape:

* 1x1, groups=1: a single batched GEMM over flattened spatial positions.
* depthwise (groups == in == out): shift-multiply-accumulate over the kernel
  taps, one strided slice per tap.
* everything else (stem, grouped): explicit sliding windows via as_strided
  plus an einsum contraction.

Forward kernels also report fused multiply-add counts to an optional counter
(see ``count_ops``) so analytic complexity numbers can be cross-checked
against an instrumented forward pass.
"""

import contextlib
import math
from typing import Optional, Sequence, Union

import numpy as np

from .tensor import Tensor, _record

_f32 = np.float32


class OpCounter:
    """Accumulates fused multiply-add counts reported by forward kernels."""

    def __init__(self):
        self.total = 0

    def add(self, n: int):
        self.total += int(n)


_op_counter: Optional[OpCounter] = None


@contextlib.contextmanager
def count_ops():
    """Collect per-kernel op counts from every forward run in the block.

    Convention (matches the analytic counter in ``analysis``): a convolution
    output element costs kh*kw*cin/groups, batch norm costs 2 per element
    (scale, shift), ReLU6 costs 1 per element, global average pooling costs 1
    per input element, a linear layer costs in*out plus out for the bias.
    Residual adds and branch averaging are wiring, not kernels, and are not
    counted.
    """
    global _op_counter
    prev = _op_counter
    counter = OpCounter()
    _op_counter = counter
    try:
        yield counter
    finally:
        _op_counter = prev


def _count(n: int):
    if _op_counter is not None:
        _op_counter.add(n)


def _conv_out_hw(h: int, w: int, kh: int, kw: int, stride: int, padding: int):
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ValueError(
            f"conv output would be empty: input {h}x{w}, kernel {kh}x{kw}, "
            f"stride {stride}, padding {padding}"
        )
    return ho, wo


def _pad_nchw(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=x.dtype)
    out[:, :, padding : padding + h, padding : padding + w] = x
    return out


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int):
    # Sliding views [N, C, ho, wo, kh, kw]; read-only, never written to.
    n, c, hp, wp = xp.shape
    sn, sc, sh, sw = xp.strides
    shape = (n, c, ho, wo, kh, kw)
    strides = (sn, sc, sh * stride, sw * stride, sh, sw)
    return np.lib.stride_tricks.as_strided(
        xp, shape=shape, strides=strides, writeable=False
    )


def _tap_slice(i: int, stride: int, ho: int):
    return slice(i, i + stride * (ho - 1) + 1, stride)


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> Tensor:
    """2-D convolution over [N, Cin, H, W] with weight [Cout, Cin/groups, kh, kw]."""
    xd, wd = x.data, weight.data
    if xd.ndim != 4:
        raise ValueError(f"conv2d input must be 4-D [N,C,H,W], got shape {x.shape}")
    if wd.ndim != 4:
        raise ValueError(f"conv2d weight must be 4-D, got shape {weight.shape}")
    if stride < 1 or padding < 0 or groups < 1:
        raise ValueError("stride must be >=1, padding >=0, groups >=1")
    n, cin, h, w = xd.shape
    cout, cin_g, kh, kw = wd.shape
    if cin % groups or cout % groups:
        raise ValueError(f"groups={groups} must divide in={cin} and out={cout} channels")
    if cin_g != cin // groups:
        raise ValueError(
            f"weight expects {cin_g} channels per group, input provides {cin // groups}"
        )
    if bias is not None and bias.shape != (cout,):
        raise ValueError(f"bias shape {bias.shape} != ({cout},)")
    ho, wo = _conv_out_hw(h, w, kh, kw, stride, padding)

    if kh == 1 and kw == 1 and groups == 1 and padding == 0:
        out, backward = _conv_1x1(x, weight, stride, ho, wo)
    elif groups == cin and groups == cout:
        out, backward = _conv_depthwise(x, weight, stride, padding, ho, wo)
    elif groups == 1:
        out, backward = _conv_im2col(x, weight, stride, padding, ho, wo)
    else:
        out, backward = _conv_grouped(x, weight, stride, padding, groups, ho, wo)

    _count(ho * wo * n * cout * (kh * kw * cin_g))
    parents = [x, weight]
    if bias is not None:
        out += bias.data[None, :, None, None]
        parents.append(bias)
        _count(n * cout * ho * wo)

        def backward_with_bias(g, inner=backward):
            dx, dw = inner(g)
            return dx, dw, g.sum(axis=(0, 2, 3))

        return _record(out, parents, backward_with_bias)
    return _record(out, parents, backward)


def _conv_1x1(x: Tensor, weight: Tensor, stride: int, ho: int, wo: int):
    xd, wd = x.data, weight.data
    n, cin, h, w = xd.shape
    cout = wd.shape[0]
    xs = xd[:, :, ::stride, ::stride] if stride > 1 else xd
    x3 = np.ascontiguousarray(xs).reshape(n, cin, ho * wo)
    w2 = wd.reshape(cout, cin)
    out = np.matmul(w2, x3).reshape(n, cout, ho, wo)
    need_dx = x.requires_grad

    def backward(g):
        g3 = g.reshape(n, cout, ho * wo)
        dw = np.tensordot(g3, x3, axes=([0, 2], [0, 2])).reshape(wd.shape)
        if not need_dx:
            return None, dw
        dx3 = np.matmul(w2.T, g3)
        if stride == 1:
            return dx3.reshape(n, cin, h, w), dw
        dx = np.zeros((n, cin, h, w), dtype=_f32)
        dx[:, :, ::stride, ::stride] = dx3.reshape(n, cin, ho, wo)
        return dx, dw

    return out, backward


def _conv_depthwise(x: Tensor, weight: Tensor, stride: int, padding: int, ho: int, wo: int):
    xd, wd = x.data, weight.data
    n, c, h, w = xd.shape
    kh, kw = wd.shape[2], wd.shape[3]
    xp = _pad_nchw(xd, padding)
    taps = wd.reshape(c, kh, kw)
    out = np.empty((n, c, ho, wo), dtype=_f32)
    tmp = np.empty_like(out)
    first = True
    for i in range(kh):
        for j in range(kw):
            xs = xp[:, :, _tap_slice(i, stride, ho), _tap_slice(j, stride, wo)]
            if first:
                np.multiply(xs, taps[:, i, j][None, :, None, None], out=out)
                first = False
            else:
                np.multiply(xs, taps[:, i, j][None, :, None, None], out=tmp)
                out += tmp
    need_dx = x.requires_grad

    def backward(g):
        # xp is kept from the forward pass; g is never written to.
        dw = np.empty_like(wd)
        tmp = np.empty_like(g)
        dxp = np.zeros_like(xp) if need_dx else None
        for i in range(kh):
            for j in range(kw):
                si, sj = _tap_slice(i, stride, ho), _tap_slice(j, stride, wo)
                if dxp is not None:
                    np.multiply(g, taps[:, i, j][None, :, None, None], out=tmp)
                    dxp[:, :, si, sj] += tmp
                dw[:, 0, i, j] = np.einsum("nchw,nchw->c", xp[:, :, si, sj], g)
        if dxp is None:
            return None, dw
        if padding:
            dx = np.ascontiguousarray(dxp[:, :, padding : padding + h, padding : padding + w])
        else:
            dx = dxp
        return dx, dw

    return out, backward


def _conv_im2col(x: Tensor, weight: Tensor, stride: int, padding: int, ho: int, wo: int):
    # dense convolution: gather windows once, then plain GEMMs throughout
    xd, wd = x.data, weight.data
    n, cin, h, w = xd.shape
    cout, _, kh, kw = wd.shape
    k = cin * kh * kw
    xp = _pad_nchw(xd, padding)
    win = _windows(xp, kh, kw, stride, ho, wo)  # [N, Cin, ho, wo, kh, kw]
    cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(n, k, ho * wo)
    w2 = wd.reshape(cout, k)
    out = np.matmul(w2, cols).reshape(n, cout, ho, wo)
    need_dx = x.requires_grad

    def backward(g):
        g3 = g.reshape(n, cout, ho * wo)
        dw = np.tensordot(g3, cols, axes=([0, 2], [0, 2])).reshape(wd.shape)
        if not need_dx:
            return None, dw
        dcols = np.matmul(w2.T, g3).reshape(n, cin, kh, kw, ho, wo)
        dxp = np.zeros((n, cin, h + 2 * padding, w + 2 * padding), dtype=_f32)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, _tap_slice(i, stride, ho), _tap_slice(j, stride, wo)] += dcols[
                    :, :, i, j
                ]
        if padding:
            dx = np.ascontiguousarray(dxp[:, :, padding : padding + h, padding : padding + w])
        else:
            dx = dxp
        return dx, dw

    return out, backward


def _conv_grouped(x: Tensor, weight: Tensor, stride: int, padding: int, groups: int, ho: int, wo: int):
    xd, wd = x.data, weight.data
    n, cin, h, w = xd.shape
    cout, cin_g, kh, kw = wd.shape
    cout_g = cout // groups
    xp = _pad_nchw(xd, padding)
    win = _windows(xp, kh, kw, stride, ho, wo).reshape(n, groups, cin_g, ho, wo, kh, kw)
    w5 = wd.reshape(groups, cout_g, cin_g, kh, kw)
    out = np.einsum("ngihwkl,goikl->ngohw", win, w5, optimize=True)
    out = np.ascontiguousarray(out.reshape(n, cout, ho, wo))
    need_dx = x.requires_grad

    def backward(g):
        g5 = g.reshape(n, groups, cout_g, ho, wo)
        xpb = _pad_nchw(xd, padding)
        winb = _windows(xpb, kh, kw, stride, ho, wo).reshape(
            n, groups, cin_g, ho, wo, kh, kw
        )
        dw = np.einsum("ngihwkl,ngohw->goikl", winb, g5, optimize=True)
        dw = dw.reshape(wd.shape)
        if not need_dx:
            return None, dw
        dcols = np.einsum("goikl,ngohw->ngihwkl", w5, g5, optimize=True)
        dcols = dcols.reshape(n, cin, ho, wo, kh, kw)
        dxp = np.zeros_like(xpb)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, _tap_slice(i, stride, ho), _tap_slice(j, stride, wo)] += dcols[
                    :, :, :, :, i, j
                ]
        if padding:
            dx = np.ascontiguousarray(dxp[:, :, padding : padding + h, padding : padding + w])
        else:
            dx = dxp
        return dx, dw

    return out, backward


def relu6(x: Tensor) -> Tensor:
    """Clamp to [0, 6]; gradient passes only where 0 < x < 6."""
    xd = x.data
    out = np.clip(xd, _f32(0), _f32(6))
    _count(xd.size)

    def backward(g):
        # the pass-through mask is recoverable from the clipped output:
        # inputs <= 0 clamp to 0, inputs >= 6 clamp to 6
        return (g * ((out > 0) & (out < 6)),)

    return _record(out, [x], backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial dims: [N, C, H, W] -> [N, C]."""
    xd = x.data
    if xd.ndim != 4:
        raise ValueError(f"global_avg_pool expects 4-D input, got shape {x.shape}")
    n, c, h, w = xd.shape
    out = xd.mean(axis=(2, 3), dtype=np.float32)
    _count(n * c * h * w)
    inv = _f32(1.0 / (h * w))

    def backward(g):
        return (np.broadcast_to((g * inv)[:, :, None, None], xd.shape),)

    return _record(out, [x], backward)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map [N, in] @ weight[out, in].T + bias[out]."""
    xd, wd = x.data, weight.data
    if xd.ndim != 2 or wd.ndim != 2:
        raise ValueError("linear expects 2-D input and weight")
    if xd.shape[1] != wd.shape[1]:
        raise ValueError(f"linear: input features {xd.shape[1]} != weight in features {wd.shape[1]}")
    out = np.matmul(xd, wd.T)
    _count(xd.shape[0] * wd.shape[0] * wd.shape[1])
    parents = [x, weight]
    if bias is not None:
        out += bias.data[None, :]
        parents.append(bias)
        _count(xd.shape[0] * wd.shape[0])

    def backward(g):
        dx = np.matmul(g, wd)
        dw = np.matmul(g.T, xd)
        if bias is None:
            return dx, dw
        return dx, dw, g.sum(axis=0)

    return _record(out, parents, backward)


class Conv2dLayer:
    """Convolution layer owning its weight (and optional bias) tensors.

    Weights use Kaiming fan-out init: N(0, sqrt(2 / (out_ch * kh * kw))).
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        stride: int = 1,
        padding: int = 0,
        groups: int = 1,
        bias: bool = False,
        rng: Optional[np.random.Generator] = None,
    ):
        if in_channels % groups or out_channels % groups:
            raise ValueError(
                f"groups={groups} must divide in_channels={in_channels} "
                f"and out_channels={out_channels}"
            )
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        self.groups = groups
        shape = (out_channels, in_channels // groups, kernel_size, kernel_size)
        if rng is None:
            w = np.zeros(shape, dtype=_f32)
        else:
            std = math.sqrt(2.0 / (out_channels * kernel_size * kernel_size))
            w = rng.normal(0.0, std, size=shape).astype(_f32)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels, dtype=_f32), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)

    def named_parameters(self, prefix: str = ""):
        yield prefix + "weight", self.weight
        if self.bias is not None:
            yield prefix + "bias", self.bias


class BatchNormLayer:
    """Batch normalization with running statistics.

    Training mode normalizes with biased batch statistics and folds the batch
    into the running estimates (unbiased variance there, matching the usual
    convention); eval mode is a per-channel affine using the running stats.
    """

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        self.channels = channels
        self.eps = float(eps)
        self.momentum = float(momentum)
        self.gamma = Tensor(np.ones(channels, dtype=_f32), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=_f32), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=_f32)
        self.running_var = np.ones(channels, dtype=_f32)
        self.training_mode = False

    def __call__(self, x: Tensor) -> Tensor:
        xd = x.data
        if xd.ndim != 4 or xd.shape[1] != self.channels:
            raise ValueError(
                f"batch norm over {self.channels} channels got input shape {x.shape}"
            )
        n, c, h, w = xd.shape
        _count(2 * xd.size)
        if self.training_mode:
            return self._forward_train(x)
        scale = self.gamma.data / np.sqrt(self.running_var + _f32(self.eps))
        shift = self.beta.data - self.running_mean * scale
        out = xd * scale[None, :, None, None]
        out += shift[None, :, None, None]
        inv = _f32(1.0) / np.sqrt(self.running_var + _f32(self.eps))
        gamma_d, mean_d = self.gamma.data, self.running_mean

        def backward(g):
            dx = g * (gamma_d * inv)[None, :, None, None]
            dgamma = np.einsum(
                "nchw,nchw->c", g, (xd - mean_d[None, :, None, None]) * inv[None, :, None, None],
                optimize=True,
            )
            dbeta = g.sum(axis=(0, 2, 3))
            return dx, dgamma, dbeta

        return _record(out, [x, self.gamma, self.beta], backward)

    def _forward_train(self, x: Tensor) -> Tensor:
        xd = x.data
        n, c, h, w = xd.shape
        m = n * h * w
        if m < 2:
            raise ValueError(
                f"batch norm in training mode needs at least 2 values per channel, got {m}"
            )
        mean = xd.mean(axis=(0, 2, 3), dtype=np.float32)
        centered = xd - mean[None, :, None, None]
        var = np.einsum("nchw,nchw->c", centered, centered, optimize=True) / _f32(m)
        inv = _f32(1.0) / np.sqrt(var + _f32(self.eps))
        mom = _f32(self.momentum)
        self.running_mean = (_f32(1.0) - mom) * self.running_mean + mom * mean
        unbiased = var * _f32(m / (m - 1))
        self.running_var = (_f32(1.0) - mom) * self.running_var + mom * unbiased
        gamma_d = self.gamma.data
        out = centered * (gamma_d * inv)[None, :, None, None]
        out += self.beta.data[None, :, None, None]

        def backward(g):
            # x_hat is recomputed from saved mean/inv to keep one fewer
            # activation-sized array alive between forward and backward.
            x_hat = centered * inv[None, :, None, None]
            dgamma = np.einsum("nchw,nchw->c", g, x_hat, optimize=True)
            dbeta = g.sum(axis=(0, 2, 3))
            dx = (gamma_d * inv)[None, :, None, None] * (
                g
                - (dbeta / _f32(m))[None, :, None, None]
                - x_hat * (dgamma / _f32(m))[None, :, None, None]
            )
            return dx, dgamma, dbeta

        return _record(out, [x, self.gamma, self.beta], backward)

    def named_parameters(self, prefix: str = ""):
        yield prefix + "gamma", self.gamma
        yield prefix + "beta", self.beta

    def named_buffers(self, prefix: str = ""):
        yield prefix + "running_mean", self.running_mean
        yield prefix + "running_var", self.running_var

    def set_buffer(self, name: str, value: np.ndarray):
        if name not in ("running_mean", "running_var"):
            raise KeyError(name)
        value = np.asarray(value, dtype=_f32)
        if value.shape != (self.channels,):
            raise ValueError(f"{name} shape {value.shape} != ({self.channels},)")
        if name == "running_var" and np.any(value < 0):
            raise ValueError("running_var must be non-negative")
        setattr(self, name, value.copy())


def bn_relu6(bn: BatchNormLayer, x: Tensor) -> Tensor:
    """Fused batch norm + ReLU6.

    Mathematically identical to ``relu6(bn(x))`` but records one tape node and
    clamps in place, skipping one activation-sized allocation and two memory
    passes per layer.  The backbone runs almost every norm through a ReLU6, so
    this is the hottest fusion available.
    """
    xd = x.data
    if xd.ndim != 4 or xd.shape[1] != bn.channels:
        raise ValueError(
            f"batch norm over {bn.channels} channels got input shape {x.shape}"
        )
    n, c, h, w = xd.shape
    _count(3 * xd.size)  # 2 per element for the affine, 1 for the clamp
    gamma_d = bn.gamma.data

    if bn.training_mode:
        m = n * h * w
        if m < 2:
            raise ValueError(
                f"batch norm in training mode needs at least 2 values per channel, got {m}"
            )
        mean = xd.mean(axis=(0, 2, 3), dtype=np.float32)
        centered = xd - mean[None, :, None, None]
        var = np.einsum("nchw,nchw->c", centered, centered, optimize=True) / _f32(m)
        inv = _f32(1.0) / np.sqrt(var + _f32(bn.eps))
        mom = _f32(bn.momentum)
        bn.running_mean = (_f32(1.0) - mom) * bn.running_mean + mom * mean
        bn.running_var = (_f32(1.0) - mom) * bn.running_var + mom * var * _f32(m / (m - 1))
        out = centered * (gamma_d * inv)[None, :, None, None]
        out += bn.beta.data[None, :, None, None]
        np.clip(out, _f32(0), _f32(6), out=out)

        def backward(g):
            gm = g * ((out > 0) & (out < 6))
            x_hat = centered * inv[None, :, None, None]
            dgamma = np.einsum("nchw,nchw->c", gm, x_hat, optimize=True)
            dbeta = gm.sum(axis=(0, 2, 3))
            dx = (gamma_d * inv)[None, :, None, None] * (
                gm
                - (dbeta / _f32(m))[None, :, None, None]
                - x_hat * (dgamma / _f32(m))[None, :, None, None]
            )
            return dx, dgamma, dbeta

        return _record(out, [x, bn.gamma, bn.beta], backward)

    scale = gamma_d / np.sqrt(bn.running_var + _f32(bn.eps))
    shift = bn.beta.data - bn.running_mean * scale
    out = xd * scale[None, :, None, None]
    out += shift[None, :, None, None]
    np.clip(out, _f32(0), _f32(6), out=out)
    inv = _f32(1.0) / np.sqrt(bn.running_var + _f32(bn.eps))
    mean_d = bn.running_mean

    def backward(g):
        gm = g * ((out > 0) & (out < 6))
        dx = gm * (gamma_d * inv)[None, :, None, None]
        dgamma = np.einsum(
            "nchw,nchw->c", gm,
            (xd - mean_d[None, :, None, None]) * inv[None, :, None, None],
            optimize=True,
        )
        dbeta = gm.sum(axis=(0, 2, 3))
        return dx, dgamma, dbeta

    return _record(out, [x, bn.gamma, bn.beta], backward)


class LinearLayer:
    """Fully connected layer; weights N(0, std), bias zero."""

    def __init__(self, in_features: int, out_features: int, rng: Optional[np.random.Generator] = None, std: float = 0.01):
        self.in_features = in_features
        self.out_features = out_features
        if rng is None:
            w = np.zeros((out_features, in_features), dtype=_f32)
        else:
            w = rng.normal(0.0, std, size=(out_features, in_features)).astype(_f32)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(out_features, dtype=_f32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)

    def named_parameters(self, prefix: str = ""):
        yield prefix + "weight", self.weight
        yield prefix + "bias", self.bias


class LossValue:
    """Scalar loss tensor plus the batch bookkeeping the trainer reports."""

    def __init__(self, tensor: Tensor, batch_size: int, num_classes: int):
        self.tensor = tensor
        self.batch_size = batch_size
        self.num_classes = num_classes

    @property
    def value(self) -> float:
        return self.tensor.item()

    def backward(self):
        from .tensor import backward as _backward

        _backward(self.tensor)


def softmax_cross_entropy(logits: Tensor, labels: Union[Sequence[int], np.ndarray]) -> LossValue:
    """Mean softmax cross-entropy over the batch.

    Stabilized with per-row max subtraction; per-sample losses are accumulated
    in float64 before the mean is cast back to float32.
    """
    zd = logits.data
    if zd.ndim != 2:
        raise ValueError(f"logits must be [N, C], got shape {logits.shape}")
    n, c = zd.shape
    y = np.asarray(labels)
    if y.ndim != 1 or y.shape[0] != n:
        raise ValueError(f"labels must be a length-{n} vector, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        raise ValueError(f"labels must be integers, got dtype {y.dtype}")
    if y.min() < 0 or y.max() >= c:
        raise ValueError(f"labels must lie in [0, {c}), got range [{y.min()}, {y.max()}]")

    shifted = zd - zd.max(axis=1, keepdims=True)
    ez = np.exp(shifted)
    z = ez.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(z)
    per_sample = -log_probs[np.arange(n), y]
    mean = np.float32(per_sample.astype(np.float64).mean())
    probs = ez / z

    def backward(g):
        d = probs.copy()
        d[np.arange(n), y] -= _f32(1.0)
        return (d * (g * _f32(1.0 / n)),)

    out = _record(np.asarray(mean), [logits], backward)
    return LossValue(out, batch_size=n, num_classes=c)
