"""Minimal layer/parameter machinery for the autoencoder networks.

Every layer implements ``forward`` and a matching hand-derived ``backward``
that returns the input gradient and accumulates parameter gradients in place.
There is no graph tape: model classes wire their own topology explicitly,
which keeps gradient routing (shared stems, cross-task regularizers) exact
and auditable. Parameters are named numpy arrays; float32 in production,
float64 when a model is cast for finite-difference checks.
"""

import copy

import numpy as np

from ..errors import InvalidArgumentError


class Parameter:
    __slots__ = ("name", "data", "grad")

    def __init__(self, name, data):
        self.name = name
        self.data = data
        self.grad = None

    def accumulate(self, g):
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape}, dtype={self.data.dtype})"


class Module:
    """Base class: ordered registry of own parameters and child modules."""

    def __init__(self):
        self._params = []
        self._children = []

    def add_param(self, name, data):
        p = Parameter(name, data)
        self._params.append(p)
        return p

    def add_child(self, name, module):
        self._children.append((name, module))
        return module

    def parameters(self):
        """All parameters, own first then children, in registration order."""
        out = list(self._params)
        for _, child in self._children:
            out.extend(child.parameters())
        return out

    def children(self):
        return [child for _, child in self._children]

    def named_children(self):
        return list(self._children)

    def bind_names(self, prefix=""):
        """Assign hierarchical names (``prefix/local``) to every parameter."""
        for p in self._params:
            p.name = f"{prefix}/{p.name.rsplit('/', 1)[-1]}" if prefix else p.name.rsplit("/", 1)[-1]
        for local, child in self._children:
            child.bind_names(f"{prefix}/{local}" if prefix else local)
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype):
        """Deep-copied clone of this module with parameters cast to dtype."""
        clone = copy.deepcopy(self)
        for p in clone.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return clone

    def state_arrays(self):
        return {p.name: p.data for p in self.parameters()}

    def load_state_arrays(self, arrays, strict=True):
        for p in self.parameters():
            if p.name not in arrays:
                if strict:
                    raise InvalidArgumentError(f"missing parameter {p.name!r}")
                continue
            src = arrays[p.name]
            if src.shape != p.data.shape:
                raise InvalidArgumentError(
                    f"shape mismatch for {p.name!r}: {src.shape} vs {p.data.shape}")
            p.data = src.astype(p.data.dtype, copy=True)

    def forward(self, x):  # pragma: no cover - abstract
        raise NotImplementedError

    def backward(self, dy):  # pragma: no cover - abstract
        raise NotImplementedError

    def __call__(self, x):
        return self.forward(x)


def uniform_init(rng, shape, fan_in, dtype=np.float32):
    """Uniform fan-in scaled init, deterministic given the rng state."""
    bound = 1.0 / np.sqrt(float(fan_in))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)
