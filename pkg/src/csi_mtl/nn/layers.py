"""Layers used by the encoder/decoder families."""

import numpy as np
from scipy.special import expit

from .. import kernels
from .core import Module, uniform_init


class Dense(Module):
    def __init__(self, n_in, n_out, rng):
        super().__init__()
        self.n_in = n_in
        self.n_out = n_out
        self.w = self.add_param("w", uniform_init(rng, (n_in, n_out), n_in))
        self.b = self.add_param("b", np.zeros(n_out, dtype=np.float32))

    def forward(self, x):
        self._x = x
        y = x.reshape(-1, self.n_in) @ self.w.data + self.b.data
        return y.reshape(x.shape[:-1] + (self.n_out,))

    def backward(self, dy):
        x2 = self._x.reshape(-1, self.n_in)
        dy2 = dy.reshape(-1, self.n_out)
        self.w.accumulate(x2.T @ dy2)
        self.b.accumulate(dy2.sum(axis=0))
        return (dy2 @ self.w.data.T).reshape(self._x.shape)


class Conv2d(Module):
    """3x3 convolution, stride 1, same padding."""

    def __init__(self, c_in, c_out, rng):
        super().__init__()
        self.w = self.add_param("w", uniform_init(rng, (c_out, c_in, 3, 3), 9 * c_in))
        self.b = self.add_param("b", np.zeros(c_out, dtype=np.float32))

    def forward(self, x):
        self._x = x
        return kernels.conv2d_forward(x, self.w.data, self.b.data)

    def backward(self, dy):
        dy = np.ascontiguousarray(dy)
        dw, db = kernels.conv2d_backward_params(dy, self._x)
        self.w.accumulate(dw)
        self.b.accumulate(db)
        return kernels.conv2d_backward_input(dy, self.w.data)


class LeakyReLU(Module):
    def __init__(self, slope=0.3):
        super().__init__()
        self.slope = slope

    def forward(self, x):
        self._pos = x > 0
        return np.where(self._pos, x, x * self.slope)

    def backward(self, dy):
        return np.where(self._pos, dy, dy * self.slope)


class ReLU(LeakyReLU):
    def __init__(self):
        super().__init__(slope=0.0)


class Sigmoid(Module):
    def forward(self, x):
        self._y = expit(x)
        return self._y

    def backward(self, dy):
        return dy * self._y * (1.0 - self._y)


class Flatten(Module):
    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


class Reshape(Module):
    """Reshape each sample to `shape` (batch dimension untouched)."""

    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(shape)

    def forward(self, x):
        self._shape = x.shape
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, dy):
        return dy.reshape(self._shape)


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.g = self.add_param("g", np.ones(dim, dtype=np.float32))
        self.b = self.add_param("b", np.zeros(dim, dtype=np.float32))

    def forward(self, x):
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        self._inv = 1.0 / np.sqrt(var + self.eps)
        self._xhat = (x - mu) * self._inv
        return self.g.data * self._xhat + self.b.data

    def backward(self, dy):
        xhat, inv = self._xhat, self._inv
        axes = tuple(range(dy.ndim - 1))
        self.g.accumulate((dy * xhat).sum(axis=axes))
        self.b.accumulate(dy.sum(axis=axes))
        dxhat = dy * self.g.data
        return (
            dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        ) * inv


class SelfAttention(Module):
    """Single-head scaled dot-product self-attention over (B, T, d) tokens."""

    def __init__(self, dim, rng):
        super().__init__()
        self.dim = dim
        self.scale = float(dim) ** -0.5
        for name in ("wq", "wk", "wv", "wo"):
            setattr(self, name, self.add_param(name, uniform_init(rng, (dim, dim), dim)))
        for name in ("bq", "bk", "bv", "bo"):
            setattr(self, name, self.add_param(name, np.zeros(dim, dtype=np.float32)))

    def forward(self, x):
        self._x = x
        q = x @ self.wq.data + self.bq.data
        k = x @ self.wk.data + self.bk.data
        v = x @ self.wv.data + self.bv.data
        s = (q @ k.transpose(0, 2, 1)) * self.scale
        s -= s.max(axis=-1, keepdims=True)
        p = np.exp(s)
        p /= p.sum(axis=-1, keepdims=True)
        a = p @ v
        self._q, self._k, self._v, self._p, self._a = q, k, v, p, a
        return a @ self.wo.data + self.bo.data

    def backward(self, dy):
        x, q, k, v, p, a = self._x, self._q, self._k, self._v, self._p, self._a
        d = self.dim
        dy2 = dy.reshape(-1, d)
        self.wo.accumulate(a.reshape(-1, d).T @ dy2)
        self.bo.accumulate(dy2.sum(axis=0))
        da = dy @ self.wo.data.T
        dp = da @ v.transpose(0, 2, 1)
        dv = p.transpose(0, 2, 1) @ da
        ds = (dp - (dp * p).sum(axis=-1, keepdims=True)) * p * self.scale
        dq = ds @ k
        dk = ds.transpose(0, 2, 1) @ q
        x2 = x.reshape(-1, d)
        dx = np.zeros_like(x)
        for dz, w, bp in ((dq, self.wq, self.bq), (dk, self.wk, self.bk), (dv, self.wv, self.bv)):
            dz2 = dz.reshape(-1, d)
            w.accumulate(x2.T @ dz2)
            bp.accumulate(dz2.sum(axis=0))
            dx += dz @ w.data.T
        return dx


class Sequential(Module):
    def __init__(self, named_modules):
        super().__init__()
        for name, m in named_modules:
            self.add_child(name, m)

    def forward(self, x):
        for _, m in self._children:
            x = m.forward(x)
        return x

    def backward(self, dy):
        for _, m in reversed(self._children):
            dy = m.backward(dy)
        return dy


class TransformerBlock(Module):
    """Pre-norm block: x + attn(ln1(x)), then + feed-forward(ln2(.))."""

    def __init__(self, dim, hidden, rng):
        super().__init__()
        self.ln1 = self.add_child("ln1", LayerNorm(dim))
        self.attn = self.add_child("attn", SelfAttention(dim, rng))
        self.ln2 = self.add_child("ln2", LayerNorm(dim))
        self.ff = self.add_child(
            "ff",
            Sequential([
                ("fc1", Dense(dim, hidden, rng)),
                ("act", ReLU()),
                ("fc2", Dense(hidden, dim, rng)),
            ]),
        )

    def forward(self, x):
        h = x + self.attn.forward(self.ln1.forward(x))
        return h + self.ff.forward(self.ln2.forward(h))

    def backward(self, dz):
        dh = dz + self.ln2.backward(self.ff.backward(dz))
        return dh + self.ln1.backward(self.attn.backward(dh))
