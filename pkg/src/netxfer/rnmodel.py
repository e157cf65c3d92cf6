"""Windowed RouteNet-style delay model.

Blocks: Encoding (flow, link, queue MLPs), MPA (flow/queue/link GRUs plus the
inter-window queue GRU) and Readout (3-layer MLP + softplus). Scenarios are
batched as a disjoint union; windows run in order because queue state
carries over from one window to the next.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .dataio import FLOW_FEATURES, LINK_FEATURES, QUEUE_FEATURES, Normalizer, WindowedScenario
from .ndiff import (
    Block, GruCell, Mlp, NoTrainableParameters, NumericError, OptimizerState, ParamStore, Tensor, concat,
    masked_mape, no_grad, optimizer_step, rows, scale, softplus, spmm, take_rows,
)
from .ndiff.checkpoint import load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)


class ModelConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    embedding_dim: int = 32
    mpa_iterations: int = 8
    window_length: float = 0.1
    encoder_hidden: tuple[int, ...] = (32,)
    readout_hidden: tuple[int, ...] = (32, 32)
    inter_window: bool = True
    seed: int = 0

    def __post_init__(self):
        self.encoder_hidden = tuple(self.encoder_hidden)
        self.readout_hidden = tuple(self.readout_hidden)
        if self.embedding_dim < 1:
            raise ModelConfigError("embedding_dim must be >= 1")
        if self.mpa_iterations < 1:
            raise ModelConfigError("mpa_iterations must be >= 1")
        if self.window_length <= 0:
            raise ModelConfigError("window_length must be > 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_hidden"] = list(self.encoder_hidden)
        d["readout_hidden"] = list(self.readout_hidden)
        return d


# ------------------------------------------------------------------ batching


@dataclass
class GraphBatch:
    """Disjoint union of normalised scenarios, window-major (row = w * F + f)."""

    n_windows: int
    n_flows: int
    n_links: int
    flow_x: np.ndarray  # (W*F, 4)
    link_x: np.ndarray  # (W*L, 3)
    queue_x: np.ndarray  # (L, 1)
    gathers: list  # per path position: (link index per flow, (L x F) transpose selector)
    pos_masks: list  # per path position, (F, 1) or None when every flow is that long
    scatter: sp.csr_matrix  # (L x P*F): sums per-hop flow messages into queues
    scatter_t: sp.csr_matrix
    target: np.ndarray  # (W*F,)
    active: np.ndarray  # (W*F,) bool
    scenario_ids: list[int]
    flow_offsets: np.ndarray  # (S+1,)
    link_offsets: np.ndarray  # (S+1,)
    windows: list[int]  # real window count per scenario
    flow_paths: list[list[int]] = field(default_factory=list)

    def entity_adjacency(self) -> sp.csr_matrix:
        """Flow-queue and queue-link incidences plus self-loops, over entities
        ordered (flows, queues, links)."""
        F, L = self.n_flows, self.n_links
        N = F + 2 * L
        r, c = list(range(N)), list(range(N))
        for f, path in enumerate(self.flow_paths):
            for li in path:
                r += [f, F + li]
                c += [F + li, f]
        for li in range(L):
            r += [F + li, F + L + li]
            c += [F + L + li, F + li]
        A = sp.csr_matrix((np.ones(len(r)), (r, c)), shape=(N, N))
        A.data[:] = 1.0
        return A


def _normalised(ws: WindowedScenario, norm: Normalizer):
    flow = norm.flow.apply(ws.flow_features.reshape(-1, len(FLOW_FEATURES))).reshape(ws.flow_features.shape)
    lf = ws.link_features()
    link = norm.link.apply(lf.reshape(-1, len(LINK_FEATURES))).reshape(lf.shape)
    queue = norm.queue.apply(ws.queue_features())
    return flow, link, queue


def collate(scenarios: Sequence[WindowedScenario], norm: Normalizer) -> GraphBatch:
    W = max(s.n_windows for s in scenarios)
    F = sum(s.n_flows for s in scenarios)
    L = sum(s.n_links for s in scenarios)
    flow_x = np.zeros((W, F, len(FLOW_FEATURES)))
    link_x = np.zeros((W, L, len(LINK_FEATURES)))
    queue_x = np.zeros((L, len(QUEUE_FEATURES)))
    target = np.zeros((W, F))
    active = np.zeros((W, F), dtype=bool)
    paths: list[list[int]] = []
    fo, lo = [0], [0]
    for s in scenarios:
        f0, l0 = fo[-1], lo[-1]
        fx, lx, qx = _normalised(s, norm)
        w = s.n_windows
        flow_x[:w, f0:f0 + s.n_flows] = fx
        link_x[:w, l0:l0 + s.n_links] = lx
        queue_x[l0:l0 + s.n_links] = qx
        target[:w, f0:f0 + s.n_flows] = s.target
        active[:w, f0:f0 + s.n_flows] = s.active
        paths.extend([[l0 + li for li in p] for p in s.paths])
        fo.append(f0 + s.n_flows)
        lo.append(l0 + s.n_links)
    if any(len(p) == 0 for p in paths):
        raise ModelConfigError("flow with empty path")
    P = max(len(p) for p in paths)
    gathers, masks = [], []
    srow, scol = [], []
    for i in range(P):
        fl = [f for f, p in enumerate(paths) if len(p) > i]
        li = [paths[f][i] for f in fl]
        # flows shorter than i+1 hops read link 0; their update is masked out
        idx = np.array([p[i] if len(p) > i else 0 for p in paths], dtype=np.int64)
        gathers.append((idx, sp.csr_matrix((np.ones(len(fl)), (li, fl)), shape=(L, F))))
        if len(fl) == F:
            masks.append(None)
        else:
            m = np.zeros((F, 1))
            m[fl] = 1.0
            masks.append(m)
        srow += li
        scol += [i * F + f for f in fl]
    scatter = sp.csr_matrix((np.ones(len(srow)), (srow, scol)), shape=(L, P * F))
    return GraphBatch(
        n_windows=W, n_flows=F, n_links=L,
        flow_x=flow_x.reshape(W * F, -1), link_x=link_x.reshape(W * L, -1), queue_x=queue_x,
        gathers=gathers, pos_masks=masks, scatter=scatter, scatter_t=scatter.T.tocsr(),
        target=target.reshape(-1), active=active.reshape(-1),
        scenario_ids=[s.scenario_id for s in scenarios],
        flow_offsets=np.array(fo), link_offsets=np.array(lo),
        windows=[s.n_windows for s in scenarios], flow_paths=paths,
    )


# ------------------------------------------------------------------ model


@dataclass
class EmbeddingState:
    h_flow: Tensor
    h_queue: Tensor
    h_link: Tensor


@dataclass
class ForwardResult:
    prediction: Tensor  # (W*F, 1) seconds
    states: list[EmbeddingState]  # final per-window states, when requested


class RouteNetModel:
    def __init__(self, config: ModelConfig | None = None, normalizer: Normalizer | None = None,
                 seed: int | None = None):
        self.config = config or ModelConfig()
        self.normalizer = normalizer
        c = self.config
        rng = np.random.default_rng(c.seed if seed is None else seed)
        H = c.embedding_dim
        st = self.store = ParamStore()
        enc = list(c.encoder_hidden) + [H]
        self.enc_flow = Mlp(st, "enc_flow", [len(FLOW_FEATURES)] + enc, Block.ENCODING, rng)
        self.enc_link = Mlp(st, "enc_link", [len(LINK_FEATURES)] + enc, Block.ENCODING, rng)
        self.enc_queue = Mlp(st, "enc_queue", [len(QUEUE_FEATURES)] + enc, Block.ENCODING, rng)
        self.gru_window = GruCell(st, "mpa.gru_window", H, H, Block.MPA, rng)
        self.gru_flow = GruCell(st, "mpa.gru_flow", 2 * H, H, Block.MPA, rng)
        self.gru_queue = GruCell(st, "mpa.gru_queue", H, H, Block.MPA, rng)
        self.gru_link = GruCell(st, "mpa.gru_link", H, H, Block.MPA, rng)
        self.readout_mlp = Mlp(st, "readout", [H] + list(c.readout_hidden) + [1], Block.READOUT, rng)

    # -- the three stages

    def encode(self, batch: GraphBatch, window: int, prev_queue: Tensor | None = None,
               flow_enc: Tensor | None = None, link_enc: Tensor | None = None,
               queue_enc: Tensor | None = None) -> EmbeddingState:
        F, L = batch.n_flows, batch.n_links
        if batch.flow_x.shape[1] != self.enc_flow.widths[0]:
            raise ModelConfigError("flow feature dimension does not match the encoder")
        if flow_enc is None:
            flow_enc = self.enc_flow(Tensor(batch.flow_x[window * F:(window + 1) * F]))
        if link_enc is None:
            link_enc = self.enc_link(Tensor(batch.link_x[window * L:(window + 1) * L]))
        if queue_enc is None:
            queue_enc = self.enc_queue(Tensor(batch.queue_x))
        if prev_queue is None or not self.config.inter_window:
            hq = queue_enc
        else:
            hq = self.gru_window(queue_enc, prev_queue)
        return EmbeddingState(flow_enc, hq, link_enc)

    def message_pass(self, state: EmbeddingState, batch: GraphBatch) -> EmbeddingState:
        hf, hq, hl = state.h_flow, state.h_queue, state.h_link
        for _ in range(self.config.mpa_iterations):
            ql = concat([hq, hl], axis=1)
            h = hf
            msgs = []
            for (idx, Gt), m in zip(batch.gathers, batch.pos_masks):
                h = self.gru_flow(take_rows(ql, idx, Gt), h, m)
                msgs.append(h)
            hf = h
            agg = spmm(batch.scatter, concat(msgs, axis=0) if len(msgs) > 1 else msgs[0], batch.scatter_t)
            hq = self.gru_queue(agg, hq)
            hl = self.gru_link(hq, hl)
        return EmbeddingState(hf, hq, hl)

    def readout(self, h_flow: Tensor) -> Tensor:
        """Positive delay in units of the training mean delay."""
        return softplus(self.readout_mlp(h_flow))

    def forward(self, batch: GraphBatch, keep_states: bool = False) -> ForwardResult:
        W, F, L = batch.n_windows, batch.n_flows, batch.n_links
        flow_all = self.enc_flow(Tensor(batch.flow_x))
        link_all = self.enc_link(Tensor(batch.link_x))
        queue_enc = self.enc_queue(Tensor(batch.queue_x))
        prev = None
        finals, states = [], []
        for w in range(W):
            fe = rows(flow_all, w * F, (w + 1) * F) if W > 1 else flow_all
            le = rows(link_all, w * L, (w + 1) * L) if W > 1 else link_all
            st = self.encode(batch, w, prev, fe, le, queue_enc)
            st = self.message_pass(st, batch)
            prev = st.h_queue
            finals.append(st.h_flow)
            if keep_states:
                states.append(st)
        h = concat(finals, axis=0) if W > 1 else finals[0]
        ts = self.normalizer.target_scale if self.normalizer is not None else 1.0
        return ForwardResult(scale(self.readout(h), ts), states)

    def predict_batch(self, batch: GraphBatch) -> np.ndarray:
        with no_grad():
            return self.forward(batch).prediction.value.reshape(-1)

    # -- persistence

    def clone(self) -> "RouteNetModel":
        m = RouteNetModel(self.config, self.normalizer)
        m.store.load_values(self.store.values())
        for p in self.store:
            m.store[p.name].trainable = p.trainable
        return m

    def save(self, path, extra: dict | None = None) -> None:
        hp = {"model": self.config.to_dict()}
        hp.update(extra or {})
        save_checkpoint(path, self.store, hp, self.normalizer.to_dict() if self.normalizer else None)

    @classmethod
    def load(cls, path) -> "RouteNetModel":
        doc = load_checkpoint(path)
        norm = Normalizer.from_dict(doc["normalizer"]) if doc.get("normalizer") else None
        m = cls(ModelConfig(**doc["hyperparameters"]["model"]), norm)
        loaded = doc["parameters"]
        m.store.load_values(loaded.values())
        for p in loaded:
            m.store[p.name].trainable = p.trainable
        return m


# ------------------------------------------------------------------ training


@dataclass
class TrainConfig:
    lr: float = 1e-3
    max_epochs: int = 200
    patience: int = 20
    batch_size: int = 8
    seed: int = 0


@dataclass
class TrainResult:
    model: RouteNetModel
    history: list[dict]
    best_epoch: int
    best_val_loss: float

    def write_history_csv(self, path) -> None:
        write_history_csv(self.history, path)


def write_history_csv(history: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss"])
        for h in history:
            w.writerow([h["epoch"], repr(float(h["train_loss"])), repr(float(h["val_loss"]))])


class TrainingDiverged(NumericError):
    def __init__(self, epoch: int, batch: int, cause: NumericError):
        FloatingPointError.__init__(self, f"training diverged at epoch {epoch}, batch {batch}: {cause}")
        self.op = cause.op
        self.where = cause.where


class BatchCache:
    """Collated batches keyed by the scenarios they contain (bounded)."""

    def __init__(self, norm: Normalizer, max_entries: int = 512):
        self.norm = norm
        self.max_entries = max_entries
        self._cache: dict[tuple, GraphBatch] = {}

    def get(self, scenarios: Sequence[WindowedScenario]) -> GraphBatch:
        key = tuple(id(s) for s in scenarios)
        b = self._cache.get(key)
        if b is None:
            if len(self._cache) >= self.max_entries:
                self._cache.clear()
            b = self._cache[key] = collate(scenarios, self.norm)
        return b


def evaluate_loss(model: RouteNetModel, scenarios: Sequence[WindowedScenario], batch_size: int = 16,
                  cache: BatchCache | None = None) -> float:
    """Masked MAPE (fraction) aggregated uniformly over active flow-windows."""
    cache = cache or BatchCache(model.normalizer)
    tot, n = 0.0, 0
    for i in range(0, len(scenarios), batch_size):
        b = cache.get(scenarios[i:i + batch_size])
        p = model.predict_batch(b)
        m = b.active
        tot += float(np.sum(np.abs(p[m] - b.target[m]) / b.target[m]))
        n += int(m.sum())
    return tot / n if n else 0.0


ExtraLoss = Callable[[RouteNetModel, GraphBatch, ForwardResult], Tensor]
EpochHook = Callable[[int, dict], None]


def train(model: RouteNetModel, train_set: Sequence[WindowedScenario], val_set: Sequence[WindowedScenario],
          config: TrainConfig, extra_loss: ExtraLoss | None = None, keep_states: bool = False,
          epoch_hook: EpochHook | None = None) -> TrainResult:
    """Mini-batch Adam on masked MAPE with early stopping.

    Returns the model restored to the weights with the lowest validation loss.
    ``epoch_hook(epoch, block_grad_norms)`` runs after every epoch; the norms
    are those of the gradient accumulated over the epoch, frozen blocks
    included.
    """
    if not train_set or not val_set:
        raise ValueError("training and validation splits must be nonempty")
    if model.normalizer is None:
        model.normalizer = Normalizer.fit(train_set)
    if not model.store.trainable():
        raise NoTrainableParameters("no trainable parameters")
    state = OptimizerState(lr=config.lr)
    rng = np.random.default_rng(config.seed)
    cache = BatchCache(model.normalizer)
    val_sorted = list(val_set)
    history: list[dict] = []
    best = (np.inf, 0, model.store.values())
    model.store.zero_grad()
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(train_set))
        batches = [[train_set[j] for j in order[i:i + config.batch_size]]
                   for i in range(0, len(order), config.batch_size)]
        losses = []
        acc = {p.name: np.zeros_like(p.value) for p in model.store} if epoch_hook else None
        for bi, scen in enumerate(batches):
            b = cache.get(scen)
            try:
                out = model.forward(b, keep_states=keep_states)
                loss = masked_mape(out.prediction, b.target, b.active)
                total_loss = loss if extra_loss is None else loss + extra_loss(model, b, out)
                total_loss.backward()
            except NumericError as err:
                raise TrainingDiverged(epoch, bi, err) from err
            losses.append(loss.item())
            if acc is not None:
                for p in model.store:
                    acc[p.name] += p.grad
            optimizer_step(model.store, state)
        val = evaluate_loss(model, val_sorted, cache=cache)
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "val_loss": val})
        log.debug("epoch %d train %.4f val %.4f", epoch, history[-1]["train_loss"], val)
        if val < best[0]:
            best = (val, epoch, model.store.values())
        if epoch_hook is not None:
            norms = {}
            for blk in model.store.blocks():
                norms[blk] = float(np.sqrt(sum(np.sum(acc[p.name] ** 2) for p in model.store.in_block(blk))))
            epoch_hook(epoch, norms)
        if epoch - best[1] >= config.patience:
            break
    if history:
        model.store.load_values(best[2])
    return TrainResult(model, history, best[1], float(best[0]))
