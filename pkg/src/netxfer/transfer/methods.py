"""Fine-tuning a receiver model: manual policies and the automated methods."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence, Union

import numpy as np
import scipy.sparse as sp

from ..dataio import WindowedScenario
from ..ndiff import BLOCK_ORDER, Block, ParamStore, Tensor, concat, no_grad, scale, sq_dist
from ..rnmodel import GraphBatch, RouteNetModel, TrainConfig, TrainResult, train
from .ot import gtot_distance
from .policies import Action, BlockPolicy, DonorSnapshot, apply_policy

log = logging.getLogger(__name__)

TTT = BlockPolicy(Action.FINETUNE, Action.FINETUNE, Action.FINETUNE)


class MethodError(ValueError):
    pass


@dataclass(frozen=True)
class Manual:
    policy: BlockPolicy
    name = "manual"

    def validate(self):
        self.policy.validate()


@dataclass(frozen=True)
class AutoFreeze:
    threshold: float = 0.25
    patience: int = 3
    name = "autofreeze"

    @property
    def policy(self) -> BlockPolicy:
        return TTT

    def validate(self):
        if not self.threshold >= 0:
            raise MethodError("AutoFreeze threshold must be >= 0")
        if self.patience < 1:
            raise MethodError("AutoFreeze patience k must be >= 1")


@dataclass(frozen=True)
class L2SP:
    alpha: float = 1e-2
    beta: float = 1e-2
    policy: BlockPolicy = TTT
    name = "l2sp"

    def validate(self):
        if not (self.alpha >= 0 and self.beta >= 0):
            raise MethodError("L2-SP weights must be >= 0")
        self.policy.validate()


@dataclass(frozen=True)
class GTOT:
    weight: float = 0.1
    epsilon: float = 1e-2
    iterations: int = 50
    policy: BlockPolicy = TTT
    name = "gtot"

    def validate(self):
        if not self.weight >= 0:
            raise MethodError("GTOT weight must be >= 0")
        if not self.epsilon > 0:
            raise MethodError("Sinkhorn epsilon must be > 0")
        if self.iterations < 1:
            raise MethodError("Sinkhorn iterations must be >= 1")
        self.policy.validate()


TransferMethod = Union[Manual, AutoFreeze, L2SP, GTOT]


# ---------------------------------------------------------------- AutoFreeze


def autofreeze_update(history: Mapping[Block, Sequence[float]], threshold: float, patience: int,
                      frozen=(), order: Sequence[Block] = BLOCK_ORDER) -> set[Block]:
    """New freeze set after the latest epoch.

    ``history[b]`` holds block b's gradient norm for epochs 1..e. A block
    freezes once norm/first-norm < threshold held for ``patience`` epochs in a
    row. Frozen blocks stay frozen and the last trainable one never freezes.
    """
    frozen = set(frozen)
    blocks = [b for b in order if b in history]
    for b in blocks:
        if b in frozen or len(blocks) - len(frozen) <= 1:
            continue
        norms = np.asarray(history[b], dtype=np.float64)
        if len(norms) < patience or norms[0] <= 0:
            continue
        ratios = norms[-patience:] / norms[0]
        if np.all(ratios < threshold):
            frozen.add(b)
    return frozen


# ---------------------------------------------------------------- L2-SP


def l2sp_penalty(receiver: ParamStore, donor_values: Mapping[str, np.ndarray], alpha: float, beta: float,
                 transferred: Sequence[Block] | None = None) -> Tensor:
    """alpha/2 * sum ||w - w0||^2 over transferred params + beta/2 * sum ||w||^2 over fresh ones.

    ``transferred`` lists the blocks initialised from the donor (all blocks by
    default). Frozen parameters are included; they contribute zero.
    """
    blocks = set(BLOCK_ORDER if transferred is None else (Block(b) for b in transferred))
    near, fresh = [], []
    for p in receiver:
        if p.block in blocks:
            if p.name not in donor_values:
                raise MethodError(f"donor has no parameter named {p.name}")
            w0 = np.asarray(donor_values[p.name])
            if w0.shape != p.value.shape:
                raise MethodError(f"shape mismatch for {p.name}: receiver {p.value.shape}, donor {w0.shape}")
            near.append(sq_dist(p, w0))
        else:
            fresh.append(sq_dist(p, np.zeros_like(p.value)))
    out = Tensor(np.asarray(0.0))
    if near:
        out = out + scale(_sum(near), alpha / 2)
    if fresh:
        out = out + scale(_sum(fresh), beta / 2)
    return out


def _sum(ts: list[Tensor]) -> Tensor:
    acc = ts[0]
    for t in ts[1:]:
        acc = acc + t
    return acc


# ---------------------------------------------------------------- GTOT


def _stack_states(states) -> Tensor:
    parts = []
    for s in states:
        parts += [s.h_flow, s.h_queue, s.h_link]
    return concat(parts, axis=0)


class _DonorEmbeddings:
    """Donor per-window embeddings, computed once per batch."""

    def __init__(self, donor: DonorSnapshot):
        self.model = donor.model()
        self._cache: dict[int, np.ndarray] = {}

    def get(self, batch: GraphBatch) -> np.ndarray:
        key = id(batch)
        if key not in self._cache:
            with no_grad():
                out = self.model.forward(batch, keep_states=True)
            self._cache[key] = _stack_states(out.states).value
        return self._cache[key]


def batch_mask(batch: GraphBatch) -> sp.csr_matrix:
    """Block-diagonal entity adjacency, one block per window."""
    return sp.kron(sp.identity(batch.n_windows, format="csr"), batch.entity_adjacency(), format="csr")


# ---------------------------------------------------------------- fine-tuning


def finetune_lr(donor_lr: float) -> float:
    return donor_lr / 10.0


@dataclass
class FinetuneResult:
    model: RouteNetModel
    train: TrainResult
    method: str
    policy: str
    freeze_events: list[tuple[int, str]] = field(default_factory=list)

    @property
    def history(self):
        return self.train.history


def prepare_receiver(donor: DonorSnapshot, method: TransferMethod, seed: int = 1) -> RouteNetModel:
    method.validate()
    return apply_policy(donor, method.policy, seed=seed)


def finetune(receiver: RouteNetModel, train_set: Sequence[WindowedScenario], val_set: Sequence[WindowedScenario],
             method: TransferMethod, config: TrainConfig | None = None, donor: DonorSnapshot | None = None,
             ) -> FinetuneResult:
    """Train ``receiver`` on real data under ``method``.

    ``config.lr`` is used as given; build the default with
    ``TrainConfig(lr=finetune_lr(donor.train_lr))``. Optimizer state starts
    fresh.
    """
    method.validate()
    if not train_set:
        raise MethodError("fine-tuning needs a nonempty training split")
    if config is None:
        if donor is None:
            raise MethodError("no train config and no donor to derive the learning rate from")
        config = TrainConfig(lr=finetune_lr(donor.train_lr))
    present = set(receiver.store.blocks())
    missing = [b.value for b in BLOCK_ORDER if b not in present]
    if missing:
        raise MethodError(f"method {method.name} refers to blocks absent from the model: {missing}")

    extra = None
    hook = None
    keep_states = False
    events: list[tuple[int, str]] = []

    if isinstance(method, (L2SP, GTOT)) and donor is None:
        raise MethodError(f"{method.name} needs the donor snapshot")

    if isinstance(method, L2SP):
        transferred = [b for b in BLOCK_ORDER if method.policy.action(b) != Action.RETRAIN]
        values = donor.values

        def extra(model, batch, out):
            return l2sp_penalty(model.store, values, method.alpha, method.beta, transferred)

    elif isinstance(method, GTOT):
        keep_states = True
        donor_emb = _DonorEmbeddings(donor)
        masks: dict[int, sp.csr_matrix] = {}

        def extra(model, batch, out):
            if id(batch) not in masks:
                masks[id(batch)] = batch_mask(batch)
            d = gtot_distance(_stack_states(out.states), donor_emb.get(batch), masks[id(batch)],
                              method.epsilon, method.iterations)
            # the plan is uniform over windows, so this is already their mean
            return scale(d, method.weight)

    elif isinstance(method, AutoFreeze):
        norms: dict[Block, list[float]] = {b: [] for b in BLOCK_ORDER}
        frozen: set[Block] = {b for b in BLOCK_ORDER
                              if not any(p.trainable for p in receiver.store.in_block(b))}

        def hook(epoch, block_norms):
            nonlocal frozen
            for b in BLOCK_ORDER:
                norms[b].append(block_norms[b])
            new = autofreeze_update(norms, method.threshold, method.patience, frozen)
            for b in BLOCK_ORDER:
                if b in new and b not in frozen:
                    receiver.store.set_block_trainable(b, False)
                    events.append((epoch, b.value))
                    log.info("epoch %d: froze %s", epoch, b.value)
            frozen = new

    result = train(receiver, train_set, val_set, config, extra_loss=extra, keep_states=keep_states,
                   epoch_hook=hook)
    return FinetuneResult(receiver, result, method.name, method.policy.code, events)


def method_from_spec(text: str, **params) -> TransferMethod:
    """Parse ``manual:FTR``, ``autofreeze``, ``l2sp`` or ``gtot``; extra keyword
    arguments override hyperparameters."""
    kind, _, arg = text.partition(":")
    kind = kind.strip().lower()
    if kind == "manual":
        code = arg or params.pop("policy", None)
        if not code:
            raise MethodError("manual transfer needs a policy code, e.g. manual:FTR")
        if params:
            raise MethodError(f"unexpected hyperparameters for manual: {sorted(params)}")
        m = Manual(BlockPolicy.from_code(code))
        m.validate()
        return m
    classes = {"autofreeze": AutoFreeze, "l2sp": L2SP, "gtot": GTOT}
    if kind not in classes:
        raise MethodError(f"unknown transfer method {text!r}; use manual:XYZ, autofreeze, l2sp or gtot")
    if "policy" in params and params["policy"] is not None:
        params["policy"] = BlockPolicy.from_code(params["policy"])
    params = {k: v for k, v in params.items() if v is not None}
    try:
        m = replace(classes[kind](), **params)
    except TypeError as err:
        raise MethodError(f"bad hyperparameters for {kind}: {err}") from None
    m.validate()
    return m
