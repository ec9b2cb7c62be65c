"""Adam optimizer with global-norm gradient clipping over parameter trees."""

import numpy as np

from .layers import flatten_tree

__all__ = ["Adam", "clip_global_norm", "global_grad_norm"]


def global_grad_norm(leaves):
    total = 0.0
    for leaf in leaves.values():
        if leaf.grad is not None:
            total += float(np.sum(np.square(leaf.grad.astype(np.float64))))
    return float(np.sqrt(total))


def clip_global_norm(leaves, max_norm):
    norm = global_grad_norm(leaves)
    if max_norm is not None and norm > max_norm > 0:
        scale = max_norm / norm
        for leaf in leaves.values():
            if leaf.grad is not None:
                leaf.grad = leaf.grad * np.asarray(scale, dtype=leaf.grad.dtype)
    return norm


class Adam:
    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.leaves = flatten_tree(params) if isinstance(params, dict) else dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in self.leaves.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in self.leaves.items()}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for key, leaf in self.leaves.items():
            if leaf.grad is None:
                continue
            g = leaf.grad
            self.m[key] = (b1 * self.m[key] + (1.0 - b1) * g).astype(leaf.data.dtype)
            self.v[key] = (b2 * self.v[key] + (1.0 - b2) * g * g).astype(leaf.data.dtype)
            m_hat = self.m[key] / bias1
            v_hat = self.v[key] / bias2
            leaf.data = (leaf.data - self.lr * m_hat /
                         (np.sqrt(v_hat) + self.eps)).astype(leaf.data.dtype)

    def state_dict(self):
        return {
            "t": self.t,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }

    def load_state_dict(self, state):
        self.t = state["t"]
        self.m = {k: v.copy() for k, v in state["m"].items()}
        self.v = {k: v.copy() for k, v in state["v"].items()}
