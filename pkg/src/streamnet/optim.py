"""Adam optimizer with bias correction, state keyed by parameter id.

Defaults follow the experiment protocol: lr 1e-4, beta1 0.99, beta2 0.9,
epsilon 1e-8. Note beta1 > beta2 inverts the usual ordering; pass
``conventional_betas()`` for the textbook (0.9, 0.999) pair.
"""

from __future__ import annotations

import numpy as np

from .networks import Network

DEFAULT_BETAS = (0.99, 0.9)


def conventional_betas() -> tuple:
    return (0.9, 0.999)


class Adam:
    """Per-parameter first/second moment state plus the step counter."""

    def __init__(self, net: Network, lr: float = 1e-4,
                 beta1: float = 0.99, beta2: float = 0.9,
                 epsilon: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self.m = {pid: np.zeros_like(p.value) for pid, p in net.params.items()}
        self.v = {pid: np.zeros_like(p.value) for pid, p in net.params.items()}

    def step(self, net: Network):
        """One update: t += 1, decay moments, bias-correct, move parameters."""
        if set(net.params) != set(self.m):
            raise ValueError("optimizer state does not match network parameter ids")
        missing = [pid for pid, p in net.params.items() if p.grad is None]
        if missing:
            raise ValueError(f"no gradient for parameter ids {missing}; "
                             "run a backward pass first")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for pid, p in net.params.items():
            g = p.grad
            m = self.m[pid]
            v = self.v[pid]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / c1
            v_hat = v / c2
            p.value -= self.lr * m_hat / (np.sqrt(v_hat) + self.epsilon)

    # -- checkpoint support ---------------------------------------------------

    def state_arrays(self) -> dict:
        """Moment arrays in a flat id -> array map ("m." / "v." prefixed)."""
        out = {}
        for pid in self.m:
            out[f"m.{pid}"] = self.m[pid]
            out[f"v.{pid}"] = self.v[pid]
        return out

    def hyperparams(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2,
                "epsilon": self.epsilon, "t": self.t}

    @staticmethod
    def restore(net: Network, hyper: dict, arrays: dict) -> "Adam":
        opt = Adam(net, lr=hyper["lr"], beta1=hyper["beta1"],
                   beta2=hyper["beta2"], epsilon=hyper["epsilon"])
        opt.t = int(hyper["t"])
        for pid in opt.m:
            opt.m[pid] = arrays[f"m.{pid}"].reshape(opt.m[pid].shape).copy()
            opt.v[pid] = arrays[f"v.{pid}"].reshape(opt.v[pid].shape).copy()
        return opt
