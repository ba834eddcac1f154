"""Dense residual denoiser: forward pass, loss, and exact gradients.

The network maps a real-stacked snapshot of width 2M back to its clean
version.  Stack of L dense layers:

    layer 1        FC (+ optional bias) followed by the activation;
    layers 2..L-1  residual pairs: the inner layer runs FC -> BN -> act,
                   the outer runs FC -> BN, adds the pair's input back,
                   then activates;
    layer L        plain linear, no activation, no batch norm.

Ablation switches turn off the skip connection (pairs become plain
FC -> BN -> act layers), turn off batch norm, swap the activation, or
drop the first-layer bias.  Everything is plain numpy; training runs in
float32 while the gradient-check tests instantiate float64 models.

Batch norm in train mode normalizes with biased batch statistics and
updates running statistics by exponential moving average
(new = 0.9*old + 0.1*batch); inference uses the running statistics only
and never mutates the model.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

ACTIVATIONS = ("relu", "tanh", "sigmoid")
LAYER_KINDS = ("input_fc", "residual_inner", "residual_outer", "hidden", "output_linear")

BN_EPS = 1e-5
BN_MOMENTUM = 0.1  # weight of the current batch in the running average

_FP16_MAX = float(np.finfo(np.float16).max)


def relu(t: np.ndarray) -> np.ndarray:
    """Elementwise max(0, x)."""
    return np.maximum(0.0, t)


def _activation_forward(name: str, pre: np.ndarray) -> np.ndarray:
    if name == "relu":
        return relu(pre)
    if name == "tanh":
        return np.tanh(pre)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-pre))
    raise ValueError(f"unknown activation {name!r}; expected one of {ACTIVATIONS}")


def _activation_backward(name: str, dout: np.ndarray, pre: np.ndarray, out: np.ndarray) -> np.ndarray:
    if name == "relu":
        return dout * (pre > 0)
    if name == "tanh":
        return dout * (1.0 - out * out)
    if name == "sigmoid":
        return dout * out * (1.0 - out)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class Dense:
    """One fully connected layer: out = x @ w + b."""

    w: np.ndarray  # (in_dim, out_dim)
    b: np.ndarray  # (out_dim,)

    @property
    def in_dim(self) -> int:
        return int(self.w.shape[0])

    @property
    def out_dim(self) -> int:
        return int(self.w.shape[1])


@dataclass
class BatchNorm:
    """Per-feature scale/shift plus running statistics for inference."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = BN_EPS


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_dim: int
    out_dim: int
    has_bn: bool


@dataclass
class DenoiserModel:
    dense: list[Dense]
    norms: list[BatchNorm | None]
    activation: str = "relu"
    input_bias: bool = True
    use_residual: bool = True
    precision: str = "fp32"
    bn_momentum: float = BN_MOMENTUM

    def __post_init__(self) -> None:
        if len(self.dense) != len(self.norms):
            raise ValueError("dense and norms lists must be parallel")
        if len(self.dense) < 2:
            raise ValueError("model needs at least an input and an output layer")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.use_residual and (len(self.dense) - 2) % 2 != 0:
            raise ValueError("residual grouping requires an even hidden-layer count")

    @property
    def depth(self) -> int:
        return len(self.dense)

    @property
    def width_in(self) -> int:
        return self.dense[0].in_dim

    @property
    def width_out(self) -> int:
        return self.dense[-1].out_dim

    @property
    def num_sensors(self) -> int:
        return self.width_in // 2

    @property
    def use_bn(self) -> bool:
        return any(bn is not None for bn in self.norms)

    def widths(self) -> list[int]:
        return [self.dense[0].in_dim] + [layer.out_dim for layer in self.dense]

    def layer_specs(self) -> list[LayerSpec]:
        specs = []
        for i, layer in enumerate(self.dense):
            if i == 0:
                kind = "input_fc"
            elif i == self.depth - 1:
                kind = "output_linear"
            elif not self.use_residual:
                kind = "hidden"
            elif (i - 1) % 2 == 0:
                kind = "residual_inner"
            else:
                kind = "residual_outer"
            specs.append(LayerSpec(kind, layer.in_dim, layer.out_dim, self.norms[i] is not None))
        return specs

    def trainable_arrays(self) -> list[np.ndarray]:
        """Flat parameter list; order matches Gradients.flat()."""
        arrays: list[np.ndarray] = []
        for layer, bn in zip(self.dense, self.norms):
            arrays.extend([layer.w, layer.b])
            if bn is not None:
                arrays.extend([bn.gamma, bn.beta])
        return arrays

    def all_arrays(self) -> list[np.ndarray]:
        """Every stored array, running statistics included."""
        arrays: list[np.ndarray] = []
        for layer, bn in zip(self.dense, self.norms):
            arrays.extend([layer.w, layer.b])
            if bn is not None:
                arrays.extend([bn.gamma, bn.beta, bn.running_mean, bn.running_var])
        return arrays

    def parameter_count(self) -> int:
        return int(sum(a.size for a in self.all_arrays()))

    def copy(self) -> "DenoiserModel":
        dense = [Dense(l.w.copy(), l.b.copy()) for l in self.dense]
        norms = [
            None
            if bn is None
            else BatchNorm(
                bn.gamma.copy(), bn.beta.copy(),
                bn.running_mean.copy(), bn.running_var.copy(), bn.eps,
            )
            for bn in self.norms
        ]
        return replace(self, dense=dense, norms=norms)


def _stage_plan(model: DenoiserModel) -> list[tuple]:
    last = model.depth - 1
    plan: list[tuple] = [("input", 0)]
    if model.use_residual:
        for i in range(1, last, 2):
            plan.append(("block", i, i + 1))
    else:
        for i in range(1, last):
            plan.append(("hidden", i))
    plan.append(("output", last))
    return plan


def batch_norm_train(
    t: np.ndarray,
    bn: BatchNorm,
    momentum: float = BN_MOMENTUM,
    update_running: bool = True,
) -> tuple[np.ndarray, tuple]:
    """Normalize by batch statistics; optionally refresh the running ones.

    Variance is the biased (divide by batch size) estimate.  Requires a
    batch of at least two rows, otherwise the statistics are degenerate.
    """
    if t.ndim != 2 or t.shape[0] < 2:
        raise ValueError("batch norm training needs a 2-D batch with >= 2 rows")
    mean = t.mean(axis=0)
    var = t.var(axis=0)  # biased
    inv_std = 1.0 / np.sqrt(var + bn.eps)
    xhat = (t - mean) * inv_std
    out = bn.gamma * xhat + bn.beta
    if update_running:
        bn.running_mean[...] = (1.0 - momentum) * bn.running_mean + momentum * mean
        bn.running_var[...] = (1.0 - momentum) * bn.running_var + momentum * var
    return out, (xhat, inv_std, bn.gamma)


def batch_norm_infer(t: np.ndarray, bn: BatchNorm) -> np.ndarray:
    """Deterministic normalization by the stored running statistics."""
    inv_std = 1.0 / np.sqrt(bn.running_var + bn.eps)
    return bn.gamma * (t - bn.running_mean) * inv_std + bn.beta


def batch_norm_backward(dout: np.ndarray, cache: tuple) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradient through batch statistics (mean and biased variance)."""
    xhat, inv_std, gamma = cache
    n = dout.shape[0]
    dbeta = dout.sum(axis=0)
    dgamma = (dout * xhat).sum(axis=0)
    dxhat = dout * gamma
    dx = (inv_std / n) * (
        n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
    )
    return dx, dgamma, dbeta


def _affine(x: np.ndarray, layer: Dense, with_bias: bool = True) -> np.ndarray:
    out = x @ layer.w
    if with_bias:
        out = out + layer.b
    return out


@dataclass
class ForwardCache:
    """Intermediates a train-mode forward retains for exact gradients."""

    x: np.ndarray
    mode: str
    stages: list[tuple] = field(default_factory=list)
    output: np.ndarray | None = None


def forward(
    model: DenoiserModel,
    x: np.ndarray,
    mode: str = "infer",
) -> tuple[np.ndarray, ForwardCache]:
    """Run the network on a (batch, 2M) tensor.

    ``mode`` is "train" (batch statistics for BN, cache filled for
    backprop, running stats updated) or "infer" (running statistics, no
    state mutation).
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    x = np.atleast_2d(np.asarray(x))
    if x.shape[1] != model.width_in:
        raise ValueError(f"input width {x.shape[1]} != model width {model.width_in}")
    train = mode == "train"
    act = model.activation
    cache = ForwardCache(x=x, mode=mode)

    def norm_fwd(t: np.ndarray, idx: int) -> tuple[np.ndarray, tuple | None]:
        bn = model.norms[idx]
        if bn is None:
            return t, None
        if train:
            return batch_norm_train(t, bn, model.bn_momentum)
        return batch_norm_infer(t, bn), None

    h = x
    for stage in _stage_plan(model):
        if stage[0] == "input":
            layer = model.dense[stage[1]]
            pre = _affine(h, layer, with_bias=model.input_bias)
            out = _activation_forward(act, pre)
            cache.stages.append(("input", h, pre, out))
            h = out
        elif stage[0] == "block":
            i_inner, i_outer = stage[1], stage[2]
            skip = h
            pre_i = _affine(skip, model.dense[i_inner])
            u_i, bn_cache_i = norm_fwd(pre_i, i_inner)
            a_i = _activation_forward(act, u_i)
            pre_o = _affine(a_i, model.dense[i_outer])
            u_o, bn_cache_o = norm_fwd(pre_o, i_outer)
            r = skip + u_o
            out = _activation_forward(act, r)
            cache.stages.append(
                ("block", i_inner, i_outer, skip, u_i, bn_cache_i, a_i, u_o, bn_cache_o, r, out)
            )
            h = out
        elif stage[0] == "hidden":
            i = stage[1]
            pre = _affine(h, model.dense[i])
            u, bn_cache = norm_fwd(pre, i)
            out = _activation_forward(act, u)
            cache.stages.append(("hidden", i, h, u, bn_cache, out))
            h = out
        else:  # output
            layer = model.dense[stage[1]]
            out = _affine(h, layer)
            cache.stages.append(("output", h))
            h = out
    cache.output = h
    return h, cache


def loss(output: np.ndarray, target: np.ndarray) -> float:
    """Per-sample squared error over 2M features, averaged over the batch."""
    return float(per_sample_loss(output, target).mean())


def per_sample_loss(output: np.ndarray, target: np.ndarray) -> np.ndarray:
    """The same error, one value per batch row.

    Accumulates in float64 regardless of the working precision so the
    reported numbers are reproducible by an independent pass.
    """
    output = np.atleast_2d(np.asarray(output))
    target = np.atleast_2d(np.asarray(target))
    if output.shape != target.shape:
        raise ValueError(f"shape mismatch: output {output.shape} vs target {target.shape}")
    diff = output.astype(np.float64, copy=False) - target.astype(np.float64, copy=False)
    return np.sum(diff * diff, axis=1) / diff.shape[1]


@dataclass
class Gradients:
    """Parameter gradients, mirroring the model layout."""

    dense: list[tuple[np.ndarray, np.ndarray]]
    norms: list[tuple[np.ndarray, np.ndarray] | None]

    def flat(self) -> list[np.ndarray]:
        arrays: list[np.ndarray] = []
        for (dw, db), bn in zip(self.dense, self.norms):
            arrays.extend([dw, db])
            if bn is not None:
                arrays.extend([bn[0], bn[1]])
        return arrays


def backward(model: DenoiserModel, cache: ForwardCache, target: np.ndarray) -> Gradients:
    """Exact gradients of the loss for every W, b, gamma, beta.

    Needs the cache of a train-mode forward on the same batch; gradients
    flow through the batch-norm statistics and through the skip fan-out.
    """
    if cache.mode != "train" or cache.output is None:
        raise ValueError("backward requires the cache of a train-mode forward")
    target = np.atleast_2d(np.asarray(target))
    if target.shape != cache.output.shape:
        raise ValueError("target shape does not match the cached forward output")
    act = model.activation
    batch, width = cache.output.shape
    d_dense: list[tuple[np.ndarray, np.ndarray] | None] = [None] * model.depth
    d_norms: list[tuple[np.ndarray, np.ndarray] | None] = [None] * model.depth

    def norm_bwd(dout: np.ndarray, idx: int, bn_cache: tuple | None) -> np.ndarray:
        if model.norms[idx] is None:
            return dout
        dx, dgamma, dbeta = batch_norm_backward(dout, bn_cache)
        d_norms[idx] = (dgamma, dbeta)
        return dx

    # d loss / d output for the batch-averaged, width-normalized loss
    grad = (2.0 / (batch * width)) * (cache.output - target)

    for stage in reversed(cache.stages):
        if stage[0] == "output":
            _, h_in = stage
            layer_idx = model.depth - 1
            layer = model.dense[layer_idx]
            d_dense[layer_idx] = (h_in.T @ grad, grad.sum(axis=0))
            grad = grad @ layer.w.T
        elif stage[0] == "block":
            _, i_inner, i_outer, skip, u_i, bn_cache_i, a_i, u_o, bn_cache_o, r, out = stage
            dr = _activation_backward(act, grad, r, out)
            d_skip = dr.copy()
            dz_o = norm_bwd(dr, i_outer, bn_cache_o)
            outer = model.dense[i_outer]
            d_dense[i_outer] = (a_i.T @ dz_o, dz_o.sum(axis=0))
            da_i = dz_o @ outer.w.T
            du_i = _activation_backward(act, da_i, u_i, a_i)
            dz_i = norm_bwd(du_i, i_inner, bn_cache_i)
            inner = model.dense[i_inner]
            d_dense[i_inner] = (skip.T @ dz_i, dz_i.sum(axis=0))
            grad = dz_i @ inner.w.T + d_skip
        elif stage[0] == "hidden":
            _, i, h_in, u, bn_cache, out = stage
            du = _activation_backward(act, grad, u, out)
            dz = norm_bwd(du, i, bn_cache)
            layer = model.dense[i]
            d_dense[i] = (h_in.T @ dz, dz.sum(axis=0))
            grad = dz @ layer.w.T
        else:  # input
            _, h_in, pre, out = stage
            dz = _activation_backward(act, grad, pre, out)
            layer = model.dense[0]
            db = dz.sum(axis=0) if model.input_bias else np.zeros_like(layer.b)
            d_dense[0] = (h_in.T @ dz, db)
            grad = dz @ layer.w.T

    return Gradients(dense=list(d_dense), norms=d_norms)


def init_model(
    widths: list[int],
    rng: np.random.Generator,
    use_bn: bool = True,
    use_residual: bool = True,
    activation: str = "relu",
    input_bias: bool = True,
    dtype=np.float32,
) -> DenoiserModel:
    """Glorot-uniform weights, zero biases, identity batch-norm params.

    ``widths`` is the full dimension chain [in, N_1, ..., N_{L-1}, out]
    of the L dense layers.  Residual grouping requires equal widths at
    each pair's boundary.
    """
    widths = [int(w) for w in widths]
    if len(widths) < 3:
        raise ValueError("widths must list at least [in, hidden, out]")
    if any(w < 1 for w in widths):
        raise ValueError("all widths must be positive")
    depth = len(widths) - 1
    if use_residual:
        if (depth - 2) % 2 != 0:
            raise ValueError("residual grouping needs an even number of hidden layers")
        for i in range(1, depth - 1, 2):
            if widths[i] != widths[i + 2]:
                raise ValueError(
                    f"skip connection needs widths[{i}] == widths[{i + 2}], "
                    f"got {widths[i]} and {widths[i + 2]}"
                )
    dense: list[Dense] = []
    norms: list[BatchNorm | None] = []
    for i in range(depth):
        fan_in, fan_out = widths[i], widths[i + 1]
        scale = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-scale, scale, size=(fan_in, fan_out)).astype(dtype)
        dense.append(Dense(w=w, b=np.zeros(fan_out, dtype=dtype)))
        if use_bn and 0 < i < depth - 1:
            norms.append(
                BatchNorm(
                    gamma=np.ones(fan_out, dtype=dtype),
                    beta=np.zeros(fan_out, dtype=dtype),
                    running_mean=np.zeros(fan_out, dtype=dtype),
                    running_var=np.ones(fan_out, dtype=dtype),
                )
            )
        else:
            norms.append(None)
    return DenoiserModel(
        dense=dense,
        norms=norms,
        activation=activation,
        input_bias=input_bias,
        use_residual=use_residual,
    )


def to_half_precision(model: DenoiserModel) -> DenoiserModel:
    """Round every stored array to the nearest binary16 value.

    The returned model keeps float32 working arrays (inference upcasts),
    but each value is exactly representable in 16 bits, so checkpoints
    written from it carry a half-size parameter payload.  Values beyond
    the fp16 range are saturated to the largest finite fp16 and reported.
    """
    if model.precision != "fp32":
        raise ValueError("model is already stored at half precision")
    clipped = model.copy()
    overflow = 0
    for arr in clipped.all_arrays():
        over = np.abs(arr) > _FP16_MAX
        overflow += int(np.count_nonzero(over))
        np.clip(arr, -_FP16_MAX, _FP16_MAX, out=arr)
        arr[...] = arr.astype(np.float16).astype(np.float32)
    if overflow:
        warnings.warn(
            f"{overflow} parameters exceeded the fp16 range and were saturated",
            RuntimeWarning,
            stacklevel=2,
        )
    clipped.precision = "fp16"
    return clipped
