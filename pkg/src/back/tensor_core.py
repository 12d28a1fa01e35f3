"""Differentiable primitives the residual network is assembled from.

A tensor is a C-contiguous numpy array in row-major order. Networks run in
float32; the same ops accept float64 arrays, which is what gradient checking
uses. Each op is a class with a static ``forward(ctx, ...)`` and
``backward(ctx, grad)`` pair sharing an :class:`OpContext`.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from .constants import BN_EPS, BN_MOMENTUM, FD_EPS, PROB_CLAMP
from .errors import ConfigError, InputError, NumericError, OpOrderError, ShapeError

Tensor = np.ndarray

FLOAT32 = np.float32
FLOAT64 = np.float64


def as_tensor(data, dtype=FLOAT32) -> Tensor:
    """Return data as a contiguous array of dtype with strictly positive dimensions."""
    array = np.ascontiguousarray(data, dtype=dtype)
    if any(dim <= 0 for dim in array.shape):
        raise ShapeError(f"Tensor dimensions must be positive, got shape {array.shape}")
    return array


@dataclass
class OpContext:
    """State shared between the forward and backward pass of one op call."""

    training: bool = False
    rng: Optional[np.random.Generator] = None
    saved: Dict[str, object] = field(default_factory=dict)
    forward_done: bool = False

    def save_for_backward(self, **values) -> None:
        self.saved.update(values)
        self.forward_done = True

    def saved_values(self) -> Dict[str, object]:
        if not self.forward_done:
            raise OpOrderError("backward called before the matching forward")
        return self.saved


def _check_ndim(name: str, array: Tensor, ndim: int) -> None:
    if array.ndim != ndim:
        raise ShapeError(f"{name} must be {ndim}-D, got shape {array.shape}")


def conv_output_length(length: int, stride: int) -> int:
    """Length of a "same"-padded strided convolution: ceil(length / stride)."""
    return -(-length // stride)


def _same_padding(length: int, kernel: int, stride: int) -> Tuple[int, int, int]:
    out_len = conv_output_length(length, stride)
    left = kernel // 2
    right = max(0, (out_len - 1) * stride + kernel - left - length)
    return out_len, left, right


class Conv1d:
    """Strided 1-D cross-correlation with "same" zero padding.

    output[b, o, t] = bias[o] + sum_{c,k} weight[o, c, k] * x[b, c, t*stride + k - K//2]
    """

    @staticmethod
    def forward(ctx: OpContext, x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1) -> Tensor:
        """
        Args:
            x: (batch, in_channels, length) input
            weight: (out_channels, in_channels, kernel_length) filters
            bias: (out_channels,) offsets
            stride: subsampling factor

        Returns:
            (batch, out_channels, ceil(length / stride)) output
        """
        _check_ndim("conv1d input", x, 3)
        _check_ndim("conv1d weight", weight, 3)
        if x.shape[1] != weight.shape[1]:
            raise ShapeError(
                f"conv1d input has {x.shape[1]} channels but weight expects {weight.shape[1]}"
            )
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"conv1d bias shape {bias.shape} does not match {weight.shape[0]} filters")
        if int(stride) != stride or stride < 1:
            raise ConfigError(f"conv1d stride must be a positive integer, got {stride}")

        batch, _, length = x.shape
        out_channels, _, kernel = weight.shape
        out_len, left, right = _same_padding(length, kernel, stride)
        padded = np.pad(x, ((0, 0), (0, 0), (left, right)))
        span = stride * (out_len - 1) + 1

        out = np.zeros((batch, out_channels, out_len), dtype=x.dtype)
        for k in range(kernel):
            # (O, C) @ (B, C, T) -> (B, O, T), one filter tap at a time
            out += np.matmul(weight[:, :, k], padded[:, :, k:k + span:stride])
        out += bias[None, :, None]

        ctx.save_for_backward(padded=padded, weight=weight, stride=stride,
                              left=left, length=length, out_len=out_len)
        return out

    @staticmethod
    def backward(ctx: OpContext, grad: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
        saved = ctx.saved_values()
        padded, weight = saved["padded"], saved["weight"]
        stride, left, length, out_len = saved["stride"], saved["left"], saved["length"], saved["out_len"]
        kernel = weight.shape[2]
        span = stride * (out_len - 1) + 1

        grad_weight = np.empty_like(weight)
        grad_padded = np.zeros_like(padded)
        for k in range(kernel):
            window = padded[:, :, k:k + span:stride]
            grad_weight[:, :, k] = np.tensordot(grad, window, axes=([0, 2], [0, 2]))
            grad_padded[:, :, k:k + span:stride] += np.matmul(weight[:, :, k].T, grad)
        grad_bias = grad.sum(axis=(0, 2))
        grad_x = np.ascontiguousarray(grad_padded[:, :, left:left + length])
        return grad_x, grad_weight, grad_bias


class BatchNorm1d:
    """Per-channel normalization over (batch, length).

    Training mode uses the batch statistics (population variance) and returns
    running statistics updated by an exponential moving average; inference
    mode normalizes with the running statistics and returns them untouched.
    """

    @staticmethod
    def forward(ctx: OpContext, x: Tensor, gamma: Tensor, beta: Tensor,
                running_mean: Tensor, running_var: Tensor,
                eps: float = BN_EPS, momentum: float = BN_MOMENTUM) -> Tuple[Tensor, Tensor, Tensor]:
        if eps <= 0:
            raise ConfigError(f"batchnorm eps must be positive, got {eps}")
        if not 0.0 <= momentum <= 1.0:
            raise ConfigError(f"batchnorm momentum must lie in [0, 1], got {momentum}")
        _check_ndim("batchnorm input", x, 3)
        channels = x.shape[1]
        for name, param in (("gamma", gamma), ("beta", beta),
                            ("running_mean", running_mean), ("running_var", running_var)):
            if param.shape != (channels,):
                raise ShapeError(f"batchnorm {name} shape {param.shape} does not match {channels} channels")

        if ctx.training:
            if x.shape[0] * x.shape[2] < 2:
                raise InputError("batchnorm training mode needs at least 2 values per channel")
            mean = x.mean(axis=(0, 2))
            var = x.var(axis=(0, 2))
            new_mean = (momentum * running_mean + (1.0 - momentum) * mean).astype(running_mean.dtype)
            new_var = (momentum * running_var + (1.0 - momentum) * var).astype(running_var.dtype)
        else:
            mean, var = running_mean, running_var
            new_mean, new_var = running_mean, running_var

        inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
        x_hat = (x - mean[None, :, None].astype(x.dtype)) * inv_std[None, :, None]
        out = gamma[None, :, None] * x_hat + beta[None, :, None]

        ctx.save_for_backward(x_hat=x_hat, inv_std=inv_std, gamma=gamma, batch_stats=ctx.training)
        return out, new_mean, new_var

    @staticmethod
    def backward(ctx: OpContext, grad: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
        saved = ctx.saved_values()
        x_hat, inv_std, gamma = saved["x_hat"], saved["inv_std"], saved["gamma"]

        grad_gamma = (grad * x_hat).sum(axis=(0, 2))
        grad_beta = grad.sum(axis=(0, 2))
        grad_x_hat = grad * gamma[None, :, None]

        if saved["batch_stats"]:
            n = x_hat.shape[0] * x_hat.shape[2]
            sum_g = grad_x_hat.sum(axis=(0, 2), keepdims=True)
            sum_gx = (grad_x_hat * x_hat).sum(axis=(0, 2), keepdims=True)
            grad_x = (inv_std[None, :, None] / n) * (n * grad_x_hat - sum_g - x_hat * sum_gx)
        else:
            grad_x = grad_x_hat * inv_std[None, :, None]
        return grad_x, grad_gamma, grad_beta


class ReLU:
    @staticmethod
    def forward(ctx: OpContext, x: Tensor) -> Tensor:
        ctx.save_for_backward(active=x > 0)
        return np.maximum(x, 0).astype(x.dtype, copy=False)

    @staticmethod
    def backward(ctx: OpContext, grad: Tensor) -> Tensor:
        # subgradient 0 at x == 0
        return grad * ctx.saved_values()["active"]


class Dropout:
    """Inverted dropout: survivors are scaled by 1/(1-rate) at training time."""

    @staticmethod
    def forward(ctx: OpContext, x: Tensor, rate: float) -> Tensor:
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
        if not ctx.training or rate == 0.0:
            ctx.save_for_backward(mask=None)
            return x
        if ctx.rng is None:
            raise ConfigError("dropout in training mode needs an explicit rng in its OpContext")
        keep = ctx.rng.random(x.shape) >= rate
        mask = keep.astype(x.dtype) / x.dtype.type(1.0 - rate)
        ctx.save_for_backward(mask=mask)
        return x * mask

    @staticmethod
    def backward(ctx: OpContext, grad: Tensor) -> Tensor:
        mask = ctx.saved_values()["mask"]
        return grad if mask is None else grad * mask


class MaxPool1d:
    """Non-overlapping max pooling (stride == window), zero-padding the tail."""

    @staticmethod
    def forward(ctx: OpContext, x: Tensor, window: int) -> Tensor:
        if int(window) != window or window < 1:
            raise ConfigError(f"maxpool window must be a positive integer, got {window}")
        _check_ndim("maxpool input", x, 3)
        batch, channels, length = x.shape
        out_len = conv_output_length(length, window)
        padded = np.pad(x, ((0, 0), (0, 0), (0, out_len * window - length)))
        windows = padded.reshape(batch, channels, out_len, window)
        # argmax returns the first maximal element on ties
        argmax = windows.argmax(axis=3)
        out = np.take_along_axis(windows, argmax[..., None], axis=3)[..., 0]
        ctx.save_for_backward(argmax=argmax, length=length, window=window)
        return out

    @staticmethod
    def backward(ctx: OpContext, grad: Tensor) -> Tensor:
        saved = ctx.saved_values()
        argmax, length, window = saved["argmax"], saved["length"], saved["window"]
        batch, channels, out_len = argmax.shape
        routed = np.zeros((batch, channels, out_len, window), dtype=grad.dtype)
        np.put_along_axis(routed, argmax[..., None], grad[..., None], axis=3)
        return np.ascontiguousarray(routed.reshape(batch, channels, out_len * window)[:, :, :length])


class Dense:
    """Affine map x @ W + b."""

    @staticmethod
    def forward(ctx: OpContext, x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
        _check_ndim("dense input", x, 2)
        _check_ndim("dense weight", weight, 2)
        if x.shape[1] != weight.shape[0]:
            raise ShapeError(f"dense input has {x.shape[1]} features but weight expects {weight.shape[0]}")
        if bias.shape != (weight.shape[1],):
            raise ShapeError(f"dense bias shape {bias.shape} does not match {weight.shape[1]} outputs")
        ctx.save_for_backward(x=x, weight=weight)
        return x @ weight + bias

    @staticmethod
    def backward(ctx: OpContext, grad: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
        saved = ctx.saved_values()
        x, weight = saved["x"], saved["weight"]
        return grad @ weight.T, x.T @ grad, grad.sum(axis=0)


class Sigmoid:
    """Logistic function, kept strictly inside (0, 1) for every finite input."""

    @staticmethod
    def forward(ctx: OpContext, x: Tensor) -> Tensor:
        finfo = np.finfo(x.dtype)
        out = np.clip(expit(x), finfo.tiny, 1.0 - finfo.epsneg).astype(x.dtype, copy=False)
        ctx.save_for_backward(out=out)
        return out

    @staticmethod
    def backward(ctx: OpContext, grad: Tensor) -> Tensor:
        out = ctx.saved_values()["out"]
        return grad * out * (1.0 - out)


class BCELoss:
    """Class-averaged binary cross-entropy, averaged over the batch.

    loss = -(1 / (B * n_class)) * sum[y log p + (1 - y) log(1 - p)], p clamped
    to [PROB_CLAMP, 1 - PROB_CLAMP]. The gradient is evaluated at the clamped
    probabilities.
    """

    @staticmethod
    def forward(ctx: OpContext, probs: Tensor, labels: Tensor) -> float:
        if probs.shape != labels.shape:
            raise ShapeError(f"probabilities {probs.shape} and labels {labels.shape} differ in shape")
        if not np.isin(labels, (0, 1)).all():
            raise InputError("labels must be 0 or 1")
        clamped = np.clip(probs.astype(np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
        y = labels.astype(np.float64)
        terms = y * np.log(clamped) + (1.0 - y) * np.log1p(-clamped)
        loss = -float(terms.mean())
        ctx.save_for_backward(clamped=clamped, y=y, dtype=probs.dtype)
        return loss

    @staticmethod
    def backward(ctx: OpContext, grad: float = 1.0) -> Tensor:
        saved = ctx.saved_values()
        p, y = saved["clamped"], saved["y"]
        grad_probs = -(y / p - (1.0 - y) / (1.0 - p)) * (grad / p.size)
        return grad_probs.astype(saved["dtype"])


# Functional shorthands used by tests and the self-check

def conv1d(x, weight, bias, stride=1, ctx=None):
    return Conv1d.forward(ctx or OpContext(), x, weight, bias, stride)


def batchnorm1d(x, gamma, beta, running_mean, running_var, training=False,
                eps=BN_EPS, momentum=BN_MOMENTUM, ctx=None):
    ctx = ctx or OpContext(training=training)
    return BatchNorm1d.forward(ctx, x, gamma, beta, running_mean, running_var, eps, momentum)


def relu(x, ctx=None):
    return ReLU.forward(ctx or OpContext(), x)


def dropout(x, rate, training=False, rng=None, ctx=None):
    return Dropout.forward(ctx or OpContext(training=training, rng=rng), x, rate)


def maxpool1d(x, window, ctx=None):
    return MaxPool1d.forward(ctx or OpContext(), x, window)


def dense(x, weight, bias, ctx=None):
    return Dense.forward(ctx or OpContext(), x, weight, bias)


def sigmoid(x, ctx=None):
    return Sigmoid.forward(ctx or OpContext(), x)


def bce_loss(probs, labels, ctx=None):
    return BCELoss.forward(ctx or OpContext(), probs, labels)


ForwardWithBackward = Callable[..., Tuple[object, Callable[[object], Sequence[Optional[Tensor]]]]]


def finite_difference_check(func: ForwardWithBackward, inputs: Sequence[Tensor], eps: float = FD_EPS,
                            seed: int = 0, max_entries: Optional[int] = None,
                            floor: float = 1e-3) -> float:
    """Compare analytic gradients against central differences.

    ``func(*inputs)`` must return ``(output, backward)`` where
    ``backward(upstream)`` yields one gradient per input (``None`` for inputs
    that are not differentiated, such as labels). The output is reduced to a
    scalar by a fixed random projection. Inputs are promoted to float64.

    Returns the worst elementwise relative error
    ``|analytic - numeric| / max(|analytic| + |numeric|, floor)``.
    """
    rng = np.random.default_rng(seed)
    inputs = [np.array(a, dtype=FLOAT64, copy=True) for a in inputs]

    output, backward = func(*inputs)
    output = np.asarray(output, dtype=FLOAT64)
    upstream = rng.standard_normal(output.shape) if output.ndim else 1.0
    analytic = backward(upstream)

    def objective() -> float:
        value, _ = func(*inputs)
        return float(np.sum(np.asarray(value, dtype=FLOAT64) * upstream))

    worst = 0.0
    for arg, grad in zip(inputs, analytic):
        if grad is None:
            continue
        grad = np.asarray(grad, dtype=FLOAT64)
        if grad.shape != arg.shape:
            raise ShapeError(f"gradient shape {grad.shape} does not match input shape {arg.shape}")
        if not np.isfinite(grad).all():
            raise NumericError("analytic gradient contains non-finite values")
        indices = np.arange(arg.size)
        if max_entries is not None and arg.size > max_entries:
            indices = np.sort(rng.choice(arg.size, size=max_entries, replace=False))
        for flat_index in indices:
            position = np.unravel_index(flat_index, arg.shape)
            original = arg[position]
            arg[position] = original + eps
            plus = objective()
            arg[position] = original - eps
            minus = objective()
            arg[position] = original
            numeric = (plus - minus) / (2.0 * eps)
            if not np.isfinite(numeric):
                raise NumericError(f"non-finite finite difference at index {position}")
            exact = grad[position]
            error = abs(exact - numeric) / max(abs(exact) + abs(numeric), floor)
            worst = max(worst, error)
    return worst
