"""Small building blocks on top of the autodiff core: linear maps, MLPs,
normalization layers, and radial basis embeddings."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad


class ParamRegistry:
    """Flat name -> Parameter store shared by every layer of a model."""

    def __init__(self, rng):
        self.rng = rng
        self.params = {}

    def new(self, name, shape, scale=None, fill=None):
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        if fill is not None:
            value = np.full(shape, float(fill))
        else:
            if scale is None:
                scale = 1.0 / np.sqrt(shape[0]) if len(shape) > 1 else 0.0
            value = self.rng.normal(scale=scale, size=shape) if scale > 0 else np.zeros(shape)
        p = ad.Parameter(name, value)
        self.params[name] = p
        return p

    def values(self):
        return [self.params[k] for k in sorted(self.params)]


class Linear:
    def __init__(self, reg, name, din, dout, bias=True, scale=None, zero=False):
        self.w = reg.new(f"{name}.w", (din, dout), scale=0.0 if zero else scale)
        self.b = reg.new(f"{name}.b", (dout,), fill=0.0) if bias else None

    def __call__(self, x):
        out = ad.matmul(x, self.w.node)
        if self.b is not None:
            out = ad.add_bias(out, self.b.node)
        return out


class MLP:
    """Two-layer SiLU network; smooth everywhere so gradient checks behave."""

    def __init__(self, reg, name, din, dhidden, dout, zero_last=False):
        self.l1 = Linear(reg, f"{name}.l1", din, dhidden)
        self.l2 = Linear(reg, f"{name}.l2", dhidden, dout, zero=zero_last)

    def __call__(self, x):
        return self.l2(ad.silu(self.l1(x)))


class VecLinear:
    """Channel mixing of 3-vector features, rotation equivariant."""

    def __init__(self, reg, name, cin, cout, zero=False):
        scale = 0.0 if zero else 1.0 / np.sqrt(cin)
        self.w = reg.new(f"{name}.w", (cin, cout), scale=scale)

    def __call__(self, v):
        return ad.vec_linear(v, self.w.node)


class ScalarBatchNorm:
    """Standard affine batch normalization over the node axis."""

    def __init__(self, reg, name, channels, momentum=0.1, eps=1e-5):
        self.gamma = reg.new(f"{name}.gamma", (channels,), fill=1.0)
        self.beta = reg.new(f"{name}.beta", (channels,), fill=0.0)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x, train):
        # Current-batch statistics in both modes: the node set of one complex
        # is the batch, and inference inputs drift far from the training
        # running averages, so eval-mode running stats destabilize sampling.
        # Running stats are still tracked during training for checkpoints.
        if train:
            m = x.value.mean(axis=0)
            v = x.value.var(axis=0)
            self.running_mean += self.momentum * (m - self.running_mean)
            self.running_var += self.momentum * (v - self.running_var)
        mu = ad.mean(x, axis=0, keepdims=True)
        cen = ad.sub(x, _tile_rows(mu, x.value.shape[0]))
        var = ad.mean(ad.mul(cen, cen), axis=0, keepdims=True)
        denom = ad.sqrt(ad.add(var, self.eps))
        norm = ad.div(cen, _tile_rows(denom, x.value.shape[0]))
        out = ad.add_bias(
            ad.mul(norm, _tile_param(self.gamma.node, x.value.shape)), self.beta.node
        )
        return out


class VectorBatchNorm:
    """Equivariant normalization: divide each vector channel by its mean norm
    and apply a learned positive scale; no shift, so equivariance holds."""

    def __init__(self, reg, name, channels, momentum=0.1, eps=1e-5):
        # positive scale parameterized through exp
        self.log_scale = reg.new(f"{name}.log_scale", (channels,), fill=0.0)
        self.running_norm = np.ones(channels)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, v, train):
        # same batch-statistics policy as ScalarBatchNorm, and for the same
        # reason; equivariance is unaffected since only norms are used
        norms = ad.norm_last(v)  # (N, C)
        if train:
            batch_norm = norms.value.mean(axis=0)
            self.running_norm += self.momentum * (batch_norm - self.running_norm)
        mean_norm = ad.mean(norms, axis=0, keepdims=True)
        denom = ad.add(_tile_rows(mean_norm, v.value.shape[0]), self.eps)
        scale = ad.exp(self.log_scale.node)
        gain = ad.div(_tile_param(scale, norms.value.shape), denom)
        return ad.scale_vectors(gain, v)


def _tile_rows(x, n):
    """Expand a (1, C) node to (n, C)."""
    def bw(g):
        return (g.sum(axis=0, keepdims=True),)

    return ad.Node(np.broadcast_to(x.value, (n,) + x.value.shape[1:]).copy(), (x,), bw, op="tile_rows")


def _tile_param(p, shape):
    """Expand a (C,) node to (N, C)."""
    def bw(g):
        return (g.sum(axis=0),)

    return ad.Node(np.broadcast_to(p.value, shape).copy(), (p,), bw, op="tile_param")


def rbf_centers(lo, hi, count):
    centers = np.linspace(lo, hi, count)
    width = centers[1] - centers[0] if count > 1 else (hi - lo) or 1.0
    return centers, width


def rbf_embed_values(d, centers, width):
    """Plain-array Gaussian radial basis, g_i = exp(-(d - c_i)^2 / (2 w^2))."""
    d = np.asarray(d, dtype=np.float64)
    return np.exp(-((d[..., None] - centers) ** 2) / (2.0 * width**2))


def rbf_embed(d, centers, width):
    """Differentiable radial basis of a (E,) distance node -> (E, G)."""
    d = ad.as_node(d)
    cn = np.broadcast_to(centers, d.value.shape + centers.shape).copy()

    def bw_expand(g):
        return (g.sum(axis=-1),)

    expanded = ad.Node(
        np.repeat(d.value[..., None], len(centers), axis=-1), (d,), bw_expand, op="tile_last"
    )
    diff = ad.sub(expanded, ad.Node(cn))
    return ad.exp(ad.mul(ad.mul(diff, diff), -1.0 / (2.0 * width**2)))
