"""Named trainable tensors with gradient buffers and optimizer slots."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from vground.numerics import tensor as T
from vground.numerics.tensor import Tensor


class Parameter(Tensor):
    """Leaf tensor registered in a ParamStore; `trainable=False` freezes it."""

    __slots__ = ("trainable",)

    def __init__(self, data, name: str, trainable: bool = True):
        super().__init__(data, requires_grad=True, name=name)
        self.trainable = trainable


@dataclass
class _Slot:
    param: Parameter
    m: np.ndarray
    v: np.ndarray


class ParamStore:
    """Registry of parameters plus their NAdam moment state.

    Also carries the global step counter and the running product of the
    momentum schedule, both shared across all parameters.
    """

    def __init__(self):
        self._slots: dict[str, _Slot] = {}
        self.step = 0
        self.mu_product = 1.0

    def register(self, name: str, data, trainable: bool = True) -> Parameter:
        if name in self._slots:
            raise ValueError(f"parameter '{name}' already registered")
        p = Parameter(data, name=name, trainable=trainable)
        self._slots[name] = _Slot(p, np.zeros_like(p.data), np.zeros_like(p.data))
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._slots[name].param

    def __contains__(self, name: str) -> bool:
        return name in self._slots

    def names(self) -> list[str]:
        return list(self._slots)

    def slots(self):
        return self._slots.items()

    def parameters(self) -> list[Parameter]:
        return [s.param for s in self._slots.values()]

    def trainable(self) -> list[Parameter]:
        return [s.param for s in self._slots.values() if s.param.trainable]

    def zero_grads(self) -> None:
        for s in self._slots.values():
            s.param.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        """All persistent arrays (values + moments), keyed for checkpointing."""
        out: dict[str, np.ndarray] = {}
        for name, s in self._slots.items():
            out[name] = s.param.data
            out[f"{name}.nadam_m"] = s.m
            out[f"{name}.nadam_v"] = s.v
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, s in self._slots.items():
            s.param.data = arrays[name].astype(s.param.data.dtype)
            s.m = arrays[f"{name}.nadam_m"].astype(s.m.dtype)
            s.v = arrays[f"{name}.nadam_v"].astype(s.v.dtype)


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   shape: tuple | None = None) -> np.ndarray:
    """Uniform(-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))) weights."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out)).astype(
        T.default_dtype())


@dataclass
class GruParams:
    """One GRU cell: update gate z, reset gate r, candidate h."""

    W_z: Parameter
    W_r: Parameter
    W_h: Parameter
    U_z: Parameter
    U_r: Parameter
    U_h: Parameter
    b_z: Parameter
    b_r: Parameter
    b_h: Parameter

    @classmethod
    def create(cls, store: ParamStore, prefix: str, in_dim: int, hid: int,
               rng: np.random.Generator) -> "GruParams":
        def w(name, fi, fo):
            return store.register(f"{prefix}.{name}", glorot_uniform(rng, fi, fo))

        def b(name):
            return store.register(f"{prefix}.{name}",
                                  np.zeros(hid, dtype=T.default_dtype()))

        return cls(W_z=w("W_z", in_dim, hid), W_r=w("W_r", in_dim, hid),
                   W_h=w("W_h", in_dim, hid), U_z=w("U_z", hid, hid),
                   U_r=w("U_r", hid, hid), U_h=w("U_h", hid, hid),
                   b_z=b("b_z"), b_r=b("b_r"), b_h=b("b_h"))


@dataclass
class BatchNormState:
    """Batch normalization parameters and running statistics.

    gamma/beta live in the ParamStore; running stats are plain buffers
    updated as a side effect of train-mode application. `mode` selects
    between batch statistics ("train") and running statistics ("infer").
    """

    gamma: Parameter
    beta: Parameter
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.99
    eps: float = 1e-5
    mode: str = "train"

    @classmethod
    def create(cls, store: ParamStore, prefix: str, hid: int,
               momentum: float = 0.99, eps: float = 1e-5) -> "BatchNormState":
        dt = T.default_dtype()
        return cls(
            gamma=store.register(f"{prefix}.gamma", np.ones(hid, dtype=dt)),
            beta=store.register(f"{prefix}.beta", np.zeros(hid, dtype=dt)),
            running_mean=np.zeros(hid, dtype=dt),
            running_var=np.ones(hid, dtype=dt),
            momentum=momentum, eps=eps)
