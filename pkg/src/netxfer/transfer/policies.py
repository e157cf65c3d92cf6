"""Block policies: what to do with the Encoding, MPA and Readout weights."""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass

import numpy as np

from ..dataio import Normalizer
from ..ndiff import BLOCK_ORDER, Block
from ..rnmodel import ModelConfig, RouteNetModel


class Action(str, enum.Enum):
    FREEZE = "F"
    FINETUNE = "T"
    RETRAIN = "R"

    @property
    def rank(self) -> int:
        return "FTR".index(self.value)


class InvalidPolicy(ValueError):
    pass


@dataclass(frozen=True)
class BlockPolicy:
    encoding: Action
    mpa: Action
    readout: Action

    @property
    def actions(self) -> tuple[Action, Action, Action]:
        return (self.encoding, self.mpa, self.readout)

    @property
    def code(self) -> str:
        return "".join(a.value for a in self.actions)

    def action(self, block: Block) -> Action:
        return dict(zip(BLOCK_ORDER, self.actions))[Block(block)]

    @classmethod
    def from_code(cls, code: str) -> "BlockPolicy":
        code = code.strip().upper()
        if len(code) != 3 or any(c not in "FTR" for c in code):
            raise InvalidPolicy(
                f"policy code {code!r} must be 3 letters over F/T/R; valid codes: "
                + ", ".join(p.code for p in enumerate_valid_policies())
            )
        return cls(*(Action(c) for c in code))

    def violations(self) -> list[str]:
        """Guidelines this policy breaks, as readable messages."""
        out = []
        acts = self.actions
        for i, later in enumerate(acts):
            earlier = acts[:i]
            if later in (Action.FREEZE, Action.FINETUNE) and Action.RETRAIN in earlier:
                word = "frozen" if later == Action.FREEZE else "fine-tuned"
                out.append(f"layer dependencies: block {BLOCK_ORDER[i].value} is {word} after a re-trained block")
            if later == Action.FREEZE and Action.FINETUNE in earlier:
                out.append(f"layer dependencies: block {BLOCK_ORDER[i].value} is frozen after a fine-tuned block")
        if all(a == Action.FREEZE for a in acts):
            out.append("trainable weights: never freeze all blocks")
        if all(a == Action.RETRAIN for a in acts):
            out.append("always transfer something: never re-train all blocks")
        return out

    def validate(self) -> None:
        v = self.violations()
        if v:
            raise InvalidPolicy(f"policy {self.code} rejected: " + "; ".join(v))

    def __str__(self) -> str:
        return self.code


def enumerate_valid_policies() -> list[BlockPolicy]:
    """Policies whose actions never step back along Freeze < FineTune < Retrain,
    minus all-Freeze and all-Retrain."""
    out = []
    for combo in itertools.combinations_with_replacement(list(Action), 3):
        if len(set(combo)) == 1 and combo[0] != Action.FINETUNE:
            continue
        out.append(BlockPolicy(*combo))
    return out


@dataclass(frozen=True)
class DonorSnapshot:
    """Read-only copy of a trained donor model."""

    config: ModelConfig
    normalizer: Normalizer
    values: dict
    blocks: dict  # parameter name -> Block
    train_lr: float = 1e-3

    @classmethod
    def from_model(cls, model: RouteNetModel, train_lr: float = 1e-3) -> "DonorSnapshot":
        if model.normalizer is None:
            raise ValueError("donor model has no normalizer; train it first")
        values = model.store.values()
        for v in values.values():
            v.setflags(write=False)
        return cls(model.config, model.normalizer, values, {p.name: p.block for p in model.store}, train_lr)

    def model(self) -> RouteNetModel:
        m = RouteNetModel(self.config, self.normalizer)
        m.store.load_values(self.values)
        return m


def apply_policy(donor: DonorSnapshot, policy: BlockPolicy, seed: int = 1,
                 config: ModelConfig | None = None) -> RouteNetModel:
    """Receiver model: Freeze/FineTune blocks copy donor weights, Retrain blocks
    are freshly initialised; only Freeze blocks are non-trainable."""
    policy.validate()
    if config is not None and config != donor.config:
        raise ValueError("receiver and donor model configs differ")
    receiver = RouteNetModel(donor.config, donor.normalizer, seed=seed)
    for p in receiver.store:
        act = policy.action(p.block)
        if act != Action.RETRAIN:
            src = donor.values[p.name]
            if src.shape != p.value.shape:
                raise ValueError(f"shape mismatch for {p.name}: donor {src.shape}, receiver {p.value.shape}")
            p.value = np.array(src, copy=True)
        p.trainable = act != Action.FREEZE
    return receiver
