"""Windowed supervised samples built from packet traces.

Each scenario becomes a grid of ``n_windows x n_flows`` flow-window slots.
A slot with no delivered packet is inactive: it stays in the grid but is
masked out of losses and metrics.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .netsim import PacketTrace, Scenario

FLOW_FEATURES = ("avg_bandwidth", "packet_rate", "mean_packet_size", "path_length")
LINK_FEATURES = ("capacity", "prop_delay", "utilization")
QUEUE_FEATURES = ("buffer_size",)
SCHEMA = "windowed/1"


@dataclass
class WindowSample:
    scenario_id: int
    window_index: int
    flow_id: int
    features: dict[str, float]
    target: float  # mean delay in s, 0 when inactive
    packet_count: int

    @property
    def active(self) -> bool:
        return self.packet_count > 0


@dataclass
class WindowedScenario:
    scenario_id: int
    window_length: float
    window_elapsed: np.ndarray  # (W,) actual length of each window
    flow_ids: np.ndarray  # (F,)
    paths: list[list[int]]  # per flow, positions into the link arrays
    link_ids: np.ndarray  # (L,)
    link_src: np.ndarray
    link_dst: np.ndarray
    link_capacity: np.ndarray  # bits/s
    link_prop_delay: np.ndarray  # s
    queue_ids: np.ndarray  # (L,), queue i sits on link i
    queue_buffer: np.ndarray  # packets
    flow_features: np.ndarray  # (W, F, 4)
    target: np.ndarray  # (W, F)
    packet_count: np.ndarray  # (W, F) delivered packets
    meta: dict = field(default_factory=dict)

    @property
    def n_windows(self) -> int:
        return self.flow_features.shape[0]

    @property
    def n_flows(self) -> int:
        return len(self.flow_ids)

    @property
    def n_links(self) -> int:
        return len(self.link_ids)

    @property
    def active(self) -> np.ndarray:
        return self.packet_count > 0

    def link_features(self) -> np.ndarray:
        """(W, L, 3): capacity, propagation delay and offered utilization per window."""
        W, L = self.n_windows, self.n_links
        load = np.zeros((W, L))
        for f, path in enumerate(self.paths):
            for li in path:
                load[:, li] += self.flow_features[:, f, 0]
        util = load / self.link_capacity[None, :]
        return np.stack([np.broadcast_to(self.link_capacity, (W, L)),
                         np.broadcast_to(self.link_prop_delay, (W, L)), util], axis=-1)

    def queue_features(self) -> np.ndarray:
        return self.queue_buffer.astype(np.float64)[:, None]

    def samples(self) -> Iterator[WindowSample]:
        for w in range(self.n_windows):
            for f in range(self.n_flows):
                yield WindowSample(
                    self.scenario_id, w, int(self.flow_ids[f]),
                    dict(zip(FLOW_FEATURES, map(float, self.flow_features[w, f]))),
                    float(self.target[w, f]), int(self.packet_count[w, f]),
                )

    def equals(self, other: "WindowedScenario") -> bool:
        if self.scenario_id != other.scenario_id or self.window_length != other.window_length:
            return False
        if self.paths != other.paths:
            return False
        for k in ("window_elapsed", "flow_ids", "link_ids", "link_src", "link_dst", "link_capacity",
                  "link_prop_delay", "queue_ids", "queue_buffer", "flow_features", "target", "packet_count"):
            a, b = getattr(self, k), getattr(other, k)
            if a.shape != b.shape or not np.array_equal(a, b):
                return False
        return True


def window_index(send_time: np.ndarray, window_length: float) -> np.ndarray:
    return np.floor(np.asarray(send_time) / window_length).astype(np.int64)


def windowize(trace: PacketTrace, scenario: Scenario, window_length: float = 0.1) -> WindowedScenario:
    """Aggregate a packet trace into per-(window, flow) features and targets.

    Bandwidth and packet rate describe offered traffic (all packets sent in the
    window); the target is the mean delay of the delivered ones. The last
    window is normalised by its actual elapsed time when the duration is not
    a multiple of ``window_length``.
    """
    if window_length <= 0:
        raise ValueError("window_length must be > 0")
    W = max(1, int(np.ceil(scenario.duration / window_length - 1e-9)))
    elapsed = np.full(W, window_length)
    elapsed[-1] = scenario.duration - (W - 1) * window_length

    topo = scenario.topology
    links = sorted(topo.links, key=lambda lk: lk.id)
    lpos = {lk.id: i for i, lk in enumerate(links)}
    qmap = {q.link_id: q for q in topo.queues}
    flows = scenario.flows
    fpos = {f.id: i for i, f in enumerate(flows)}
    F = len(flows)

    win = np.minimum(window_index(trace.send_time, window_length), W - 1)
    fidx = np.array([fpos[int(x)] for x in trace.flow_id], dtype=np.int64) if len(trace) else np.empty(0, np.int64)
    cell = win * F + fidx
    ncell = W * F
    sent = np.bincount(cell, minlength=ncell).reshape(W, F).astype(np.float64)
    bytes_ = np.bincount(cell, weights=trace.size.astype(np.float64), minlength=ncell).reshape(W, F)
    d = trace.delivered
    count = np.bincount(cell[d], minlength=ncell).reshape(W, F)
    dsum = np.bincount(cell[d], weights=trace.arrival_time[d] - trace.send_time[d], minlength=ncell).reshape(W, F)

    feats = np.zeros((W, F, 4))
    feats[:, :, 0] = bytes_ * 8.0 / elapsed[:, None]
    feats[:, :, 1] = sent / elapsed[:, None]
    feats[:, :, 2] = np.divide(bytes_, sent, out=np.zeros_like(bytes_), where=sent > 0)
    plen = np.array([len(f.path) for f in flows], dtype=np.float64)
    feats[:, :, 3] = np.where(sent > 0, plen[None, :], 0.0)
    target = np.divide(dsum, count, out=np.zeros_like(dsum), where=count > 0)

    return WindowedScenario(
        scenario_id=scenario.id,
        window_length=float(window_length),
        window_elapsed=elapsed,
        flow_ids=np.array([f.id for f in flows], dtype=np.int64),
        paths=[[lpos[lid] for lid in f.path] for f in flows],
        link_ids=np.array([lk.id for lk in links], dtype=np.int64),
        link_src=np.array([lk.src for lk in links], dtype=np.int64),
        link_dst=np.array([lk.dst for lk in links], dtype=np.int64),
        link_capacity=np.array([lk.capacity for lk in links]),
        link_prop_delay=np.array([lk.prop_delay for lk in links]),
        queue_ids=np.array([qmap[lk.id].id for lk in links], dtype=np.int64),
        queue_buffer=np.array([qmap[lk.id].buffer_size for lk in links], dtype=np.int64),
        flow_features=feats,
        target=target,
        packet_count=count.astype(np.int64),
        meta={"fidelity": scenario.fidelity.kind},
    )


# ------------------------------------------------------------------ normalisation


@dataclass
class ZScore:
    mean: np.ndarray
    sd: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "ZScore":
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] == 0:
            raise ValueError("cannot fit a normalizer on an empty training split")
        mean = X.mean(axis=0)
        sd = X.std(axis=0)
        const = np.all(X == X[0], axis=0)
        mean = np.where(const, X[0], mean)
        sd = np.where(const | (sd <= 0), 1.0, sd)
        return cls(mean, sd)

    def apply(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X) - self.mean) / self.sd

    def invert(self, Z: np.ndarray) -> np.ndarray:
        return np.asarray(Z) * self.sd + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "sd": self.sd.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ZScore":
        return cls(np.array(d["mean"], dtype=np.float64), np.array(d["sd"], dtype=np.float64))


def fit_normalizer(samples: np.ndarray) -> ZScore:
    """z-score statistics of a ``(n, d)`` feature matrix."""
    return ZScore.fit(samples)


def apply_normalizer(norm: ZScore, samples: np.ndarray) -> np.ndarray:
    return norm.apply(samples)


@dataclass
class Normalizer:
    """Feature statistics for every entity type, fit on the training split.

    ``target_scale`` is the mean training delay; the model predicts delays in
    units of it.
    """

    flow: ZScore
    link: ZScore
    queue: ZScore
    target_scale: float = 1.0

    @classmethod
    def fit(cls, scenarios: Sequence[WindowedScenario]) -> "Normalizer":
        if not scenarios:
            raise ValueError("cannot fit a normalizer on an empty training split")
        flow = np.concatenate([s.flow_features[s.active] for s in scenarios])
        link = np.concatenate([s.link_features().reshape(-1, len(LINK_FEATURES)) for s in scenarios])
        queue = np.concatenate([s.queue_features() for s in scenarios])
        targets = np.concatenate([s.target[s.active] for s in scenarios])
        if targets.size == 0:
            raise ValueError("training split has no active flow-windows")
        return cls(ZScore.fit(flow), ZScore.fit(link), ZScore.fit(queue), float(targets.mean()))

    def to_dict(self) -> dict:
        return {"flow": self.flow.to_dict(), "link": self.link.to_dict(), "queue": self.queue.to_dict(),
                "target_scale": self.target_scale}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(ZScore.from_dict(d["flow"]), ZScore.from_dict(d["link"]), ZScore.from_dict(d["queue"]),
                   float(d["target_scale"]))


# ------------------------------------------------------------------ partitions


@dataclass
class DatasetPartition:
    training: list[int]
    validation: list[int]
    evaluation: list[int]

    def __post_init__(self):
        a, b, c = set(self.training), set(self.validation), set(self.evaluation)
        if a & b or a & c or b & c:
            raise ValueError("partition splits must be disjoint")

    def to_dict(self) -> dict:
        return {"training": self.training, "validation": self.validation, "evaluation": self.evaluation}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetPartition":
        return cls(list(d["training"]), list(d["validation"]), list(d.get("evaluation", [])))


def _counts_from_fractions(n: int, fractions: Sequence[float]) -> list[int]:
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.size != 3 or np.any(fr < 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise ValueError("fractions must be three nonnegative numbers summing to 1")
    raw = fr * n
    counts = np.floor(raw).astype(int)
    # largest remainder, ties broken by split order
    for i in np.argsort(-(raw - counts), kind="stable")[: n - counts.sum()]:
        counts[i] += 1
    for f, c, name in zip(fr, counts, ("training", "validation", "evaluation")):
        if f > 0 and c == 0:
            raise ValueError(f"fraction {f} for {name} yields zero scenarios out of {n}")
    return counts.tolist()


def split(ids: Sequence[int], fractions: Sequence[float] | None = None, seed: int = 0,
          counts: Sequence[int] | None = None) -> DatasetPartition:
    """Shuffle ``ids`` with ``seed`` and cut contiguous slices.

    Give either ``fractions`` (summing to 1) or explicit ``counts``.
    """
    ids = list(ids)
    n = len(ids)
    if counts is None:
        if fractions is None:
            raise ValueError("give fractions or counts")
        counts = _counts_from_fractions(n, fractions)
    else:
        counts = list(counts)
        if len(counts) == 2:
            counts.append(n - sum(counts))
        if len(counts) != 3 or any(c < 0 for c in counts) or sum(counts) > n:
            raise ValueError(f"counts {counts} do not fit {n} scenarios")
    perm = np.random.default_rng(seed).permutation(n)
    shuffled = [ids[i] for i in perm]
    a, b, c = counts
    return DatasetPartition(shuffled[:a], shuffled[a:a + b], shuffled[a + b:a + b + c])


# ------------------------------------------------------------------ NDJSON


def _header(ws: WindowedScenario) -> dict:
    return {
        "schema": SCHEMA,
        "kind": "header",
        "scenario_id": ws.scenario_id,
        "window_length": ws.window_length,
        "window_elapsed": ws.window_elapsed.tolist(),
        "flows": [{"id": int(fid), "path": [int(ws.link_ids[i]) for i in p]} for fid, p in zip(ws.flow_ids, ws.paths)],
        "links": [{"id": int(ws.link_ids[i]), "src": int(ws.link_src[i]), "dst": int(ws.link_dst[i]),
                   "capacity": float(ws.link_capacity[i]), "prop_delay": float(ws.link_prop_delay[i])}
                  for i in range(ws.n_links)],
        "queues": [{"id": int(ws.queue_ids[i]), "link_id": int(ws.link_ids[i]), "buffer_size": int(ws.queue_buffer[i])}
                   for i in range(ws.n_links)],
        "meta": ws.meta,
    }


def write_windowed(ws: WindowedScenario, path) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps(_header(ws), sort_keys=True) + "\n")
        for s in ws.samples():
            fh.write(json.dumps({
                "scenario_id": s.scenario_id, "window_index": s.window_index, "flow_id": s.flow_id,
                "features": s.features, "target": s.target, "packet_count": s.packet_count,
            }, sort_keys=True) + "\n")


def read_windowed(path) -> WindowedScenario:
    lines = Path(path).read_text().splitlines()
    head = json.loads(lines[0])
    if head.get("schema") != SCHEMA:
        raise ValueError(f"unsupported dataset schema {head.get('schema')!r}")
    links = head["links"]
    lpos = {lk["id"]: i for i, lk in enumerate(links)}
    flows = head["flows"]
    fpos = {f["id"]: i for i, f in enumerate(flows)}
    W, F = len(head["window_elapsed"]), len(flows)
    feats = np.zeros((W, F, len(FLOW_FEATURES)))
    target = np.zeros((W, F))
    count = np.zeros((W, F), dtype=np.int64)
    for line in lines[1:]:
        r = json.loads(line)
        w, f = r["window_index"], fpos[r["flow_id"]]
        feats[w, f] = [r["features"][k] for k in FLOW_FEATURES]
        target[w, f] = r["target"]
        count[w, f] = r["packet_count"]
    qby = {q["link_id"]: q for q in head["queues"]}
    return WindowedScenario(
        scenario_id=head["scenario_id"],
        window_length=head["window_length"],
        window_elapsed=np.array(head["window_elapsed"], dtype=np.float64),
        flow_ids=np.array([f["id"] for f in flows], dtype=np.int64),
        paths=[[lpos[lid] for lid in f["path"]] for f in flows],
        link_ids=np.array([lk["id"] for lk in links], dtype=np.int64),
        link_src=np.array([lk["src"] for lk in links], dtype=np.int64),
        link_dst=np.array([lk["dst"] for lk in links], dtype=np.int64),
        link_capacity=np.array([lk["capacity"] for lk in links], dtype=np.float64),
        link_prop_delay=np.array([lk["prop_delay"] for lk in links], dtype=np.float64),
        queue_ids=np.array([qby[lk["id"]]["id"] for lk in links], dtype=np.int64),
        queue_buffer=np.array([qby[lk["id"]]["buffer_size"] for lk in links], dtype=np.int64),
        flow_features=feats,
        target=target,
        packet_count=count,
        meta=head.get("meta", {}),
    )


def write_dataset(directory, scenarios: Sequence[WindowedScenario]) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    out = []
    for ws in scenarios:
        p = d / f"scenario_{ws.scenario_id:05d}.ndjson"
        write_windowed(ws, p)
        out.append(p)
    return out


def read_dataset(directory) -> list[WindowedScenario]:
    return [read_windowed(p) for p in sorted(Path(directory).glob("scenario_*.ndjson"))]


def build_dataset(scenarios: Sequence[Scenario], window_length: float = 0.1) -> list[WindowedScenario]:
    """Simulate and windowize each scenario."""
    from .netsim import simulate

    return [windowize(simulate(s), s, window_length) for s in scenarios]
