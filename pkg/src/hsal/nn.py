"""Parameterized layers built from ndgrad ops: linear maps and a GRU cell."""

from __future__ import annotations

import numpy as np

from . import ndgrad as ng
from .ndgrad import Tensor


def xavier_uniform(rng: np.random.Generator, n_in: int, n_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_in, n_out))


class Linear:
    """y = x W + b with W of shape (n_in, n_out)."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, name: str):
        self.name = name
        self.w = Tensor(xavier_uniform(rng, n_in, n_out), requires_grad=True)
        self.b = Tensor(np.zeros(n_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ng.add_bias(ng.matmul(x, self.w), self.b)

    def params(self) -> dict[str, Tensor]:
        return {f"{self.name}.w": self.w, f"{self.name}.b": self.b}


class GRUCell:
    """Gated recurrent unit: h' = (1-z) h + z * tanh(x Wn + (r*h) Un + bn)."""

    def __init__(self, n_in: int, n_hidden: int, rng: np.random.Generator, name: str):
        self.name = name
        self.n_hidden = n_hidden

        def _gate():
            return (Tensor(xavier_uniform(rng, n_in, n_hidden), requires_grad=True),
                    Tensor(xavier_uniform(rng, n_hidden, n_hidden), requires_grad=True),
                    Tensor(np.zeros(n_hidden), requires_grad=True))

        self.wz, self.uz, self.bz = _gate()
        self.wr, self.ur, self.br = _gate()
        self.wn, self.un, self.bn = _gate()

    def initial_state(self, batch: int) -> Tensor:
        return Tensor(np.zeros((batch, self.n_hidden)))

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        z = ng.sigmoid(ng.add_bias(ng.add(ng.matmul(x, self.wz), ng.matmul(h, self.uz)), self.bz))
        r = ng.sigmoid(ng.add_bias(ng.add(ng.matmul(x, self.wr), ng.matmul(h, self.ur)), self.br))
        cand = ng.tanh(ng.add_bias(
            ng.add(ng.matmul(x, self.wn), ng.matmul(ng.mul(r, h), self.un)), self.bn))
        one_minus_z = ng.sub(1.0, z)
        return ng.add(ng.mul(one_minus_z, h), ng.mul(z, cand))

    def params(self) -> dict[str, Tensor]:
        return {f"{self.name}.wz": self.wz, f"{self.name}.uz": self.uz, f"{self.name}.bz": self.bz,
                f"{self.name}.wr": self.wr, f"{self.name}.ur": self.ur, f"{self.name}.br": self.br,
                f"{self.name}.wn": self.wn, f"{self.name}.un": self.un, f"{self.name}.bn": self.bn}


class Mlp:
    """One-hidden-layer tanh MLP."""

    def __init__(self, n_in: int, n_hidden: int, n_out: int,
                 rng: np.random.Generator, name: str):
        self.l1 = Linear(n_in, n_hidden, rng, f"{name}.l1")
        self.l2 = Linear(n_hidden, n_out, rng, f"{name}.l2")

    def __call__(self, x: Tensor) -> Tensor:
        return self.l2(ng.tanh(self.l1(x)))

    def params(self) -> dict[str, Tensor]:
        return {**self.l1.params(), **self.l2.params()}
