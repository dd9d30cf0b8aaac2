import numpy as np

from ..errors import InvalidArgumentError


class Adam:
    """Adam over a fixed parameter list; state is keyed by parameter name."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise InvalidArgumentError("duplicate parameter names: %r" % names)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = {}

    def step(self):
        for p in self.params:
            if p.grad is None:
                continue
            st = self.state.get(p.name)
            if st is None:
                st = {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data), "t": 0}
                self.state[p.name] = st
            st["t"] += 1
            st["m"] = self.beta1 * st["m"] + (1.0 - self.beta1) * p.grad
            st["v"] = self.beta2 * st["v"] + (1.0 - self.beta2) * p.grad * p.grad
            mhat = st["m"] / (1.0 - self.beta1 ** st["t"])
            vhat = st["v"] / (1.0 - self.beta2 ** st["t"])
            p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)

    def state_arrays(self):
        """Flat name->array map plus step counts, for checkpointing."""
        out = {}
        steps = {}
        for name, st in sorted(self.state.items()):
            out[name + ".m"] = st["m"]
            out[name + ".v"] = st["v"]
            steps[name] = st["t"]
        return out, steps

    def load_state_arrays(self, arrays, steps):
        self.state = {}
        for name, t in steps.items():
            self.state[name] = {
                "m": arrays[name + ".m"].copy(),
                "v": arrays[name + ".v"].copy(),
                "t": int(t),
            }
