"""Named, block-tagged parameters and the small layers built from them."""
from __future__ import annotations

import enum
from typing import Iterator

import numpy as np

from .tensor import Tensor, add, gru_cell, matmul, relu


class Block(str, enum.Enum):
    ENCODING = "encoding"
    MPA = "mpa"
    READOUT = "readout"


BLOCK_ORDER = (Block.ENCODING, Block.MPA, Block.READOUT)


class Param(Tensor):
    __slots__ = ("name", "block", "trainable")

    def __init__(self, name: str, value: np.ndarray, block: Block, trainable: bool = True):
        super().__init__(value, requires_grad=True, op="param")
        self.name = name
        self.block = Block(block)
        self.trainable = trainable
        self.grad = np.zeros_like(self.value)


class ParamStore:
    """Ordered mapping ``name -> Param``.

    Gradients are kept for every parameter, trainable or not, so frozen
    blocks still report gradient norms.
    """

    def __init__(self) -> None:
        self._params: dict[str, Param] = {}

    def add(self, name: str, value: np.ndarray, block: Block, trainable: bool = True) -> Param:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        p = Param(name, value, block, trainable)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Param:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Param]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def in_block(self, block: Block) -> list[Param]:
        return [p for p in self if p.block == Block(block)]

    def trainable(self) -> list[Param]:
        return [p for p in self if p.trainable]

    def blocks(self) -> list[Block]:
        present = {p.block for p in self}
        return [b for b in BLOCK_ORDER if b in present]

    def set_block_trainable(self, block: Block, trainable: bool) -> None:
        for p in self.in_block(block):
            p.trainable = trainable

    def zero_grad(self) -> None:
        for p in self:
            if p.grad is None:
                p.grad = np.zeros_like(p.value)
            else:
                p.grad.fill(0.0)

    def values(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, v in values.items():
            p = self._params[name]
            v = np.asarray(v, dtype=np.float64)
            if v.shape != p.value.shape:
                raise ValueError(f"shape mismatch for {name}: {v.shape} vs {p.value.shape}")
            p.value = v.copy()

    def block_grad_norms(self) -> dict[Block, float]:
        out = {}
        for b in self.blocks():
            out[b] = float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in self.in_block(b))))
        return out

    def num_scalars(self) -> int:
        return int(sum(p.value.size for p in self))


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


class Mlp:
    """Stack of affine layers; ReLU between layers, none after the last."""

    def __init__(self, store: ParamStore, prefix: str, widths: list[int], block: Block, rng: np.random.Generator):
        if len(widths) < 2 or len(widths) > 4:
            raise ValueError("an Mlp has between 1 and 3 affine layers")
        self.layers: list[tuple[Param, Param]] = []
        for i, (fi, fo) in enumerate(zip(widths[:-1], widths[1:])):
            W = store.add(f"{prefix}.l{i}.W", glorot_uniform(rng, fi, fo), block)
            b = store.add(f"{prefix}.l{i}.b", np.zeros(fo), block)
            self.layers.append((W, b))
        self.widths = list(widths)

    def __call__(self, x: Tensor) -> Tensor:
        for i, (W, b) in enumerate(self.layers):
            x = add(matmul(x, W), b)
            if i < len(self.layers) - 1:
                x = relu(x)
        return x


class GruCell:
    def __init__(self, store: ParamStore, prefix: str, input_dim: int, hidden_dim: int, block: Block,
                 rng: np.random.Generator):
        H = hidden_dim
        Wx = np.concatenate([glorot_uniform(rng, input_dim, H) for _ in range(3)], axis=1)
        Wh = np.concatenate([glorot_uniform(rng, H, H) for _ in range(3)], axis=1)
        self.Wx = store.add(f"{prefix}.Wx", Wx, block)
        self.Wh = store.add(f"{prefix}.Wh", Wh, block)
        self.b = store.add(f"{prefix}.b", np.zeros(3 * H), block)
        self.input_dim = input_dim
        self.hidden_dim = H

    def __call__(self, x: Tensor, h: Tensor, mask: np.ndarray | None = None) -> Tensor:
        return gru_cell(x, h, self.Wx, self.Wh, self.b, mask)
