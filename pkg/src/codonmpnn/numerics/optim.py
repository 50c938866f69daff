from __future__ import annotations

from typing import Iterator, Mapping

import numpy as np

from .tensor import ShapeMismatch, Tensor


class ParamStore:
    """Named parameters plus Adam moment estimates and a step counter."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(value, requires_grad=True, name=name)
        self.params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def items(self):
        return self.params.items()

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def astype(self, dtype) -> None:
        for p in self.params.values():
            p.data = p.data.astype(dtype)
        for d in (self.m, self.v):
            for k in d:
                d[k] = d[k].astype(dtype)

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Flat name -> array view of parameters and optimizer moments."""
        out = {name: p.data for name, p in self.params.items()}
        out.update({f"adam.m/{k}": a for k, a in self.m.items()})
        out.update({f"adam.v/{k}": a for k, a in self.v.items()})
        return out

    def load_state_arrays(self, arrays: Mapping[str, np.ndarray], strict: bool = True) -> None:
        for name, p in self.params.items():
            if name not in arrays:
                if strict:
                    raise KeyError(f"missing parameter {name!r}")
                continue
            a = np.asarray(arrays[name])
            if a.shape != p.shape:
                raise ShapeMismatch(f"{name}: stored shape {a.shape} vs model shape {p.shape}")
            p.data = a.astype(p.dtype, copy=True)
        self.m = {k.removeprefix("adam.m/"): np.array(a) for k, a in arrays.items() if k.startswith("adam.m/")}
        self.v = {k.removeprefix("adam.v/"): np.array(a) for k, a in arrays.items() if k.startswith("adam.v/")}


def adam_step(
    store: ParamStore,
    grads: Mapping[str, np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update of every parameter in ``grads``, in place."""
    for name, g in grads.items():
        if g.shape != store.params[name].shape:
            raise ShapeMismatch(f"{name}: gradient shape {g.shape} vs parameter {store.params[name].shape}")
    store.step += 1
    t = store.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, g in grads.items():
        p = store.params[name]
        m = store.m.get(name)
        if m is None:
            m = store.m[name] = np.zeros_like(p.data)
            store.v[name] = np.zeros_like(p.data)
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        update = (lr / bc1) * m / (np.sqrt(v / bc2) + eps)
        p.data = (p.data - update).astype(p.dtype, copy=False)
