"""Event-driven FIFO store-and-forward simulation."""
from __future__ import annotations

import heapq
import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import Perturbed, Scenario

# tie-break order for simultaneous events: a departure frees buffer space first
DEPART = 0
ARRIVE = 1

TRAFFIC_STREAM = 1
SIZE_STREAM = 2
JITTER_STREAM = 3


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent counter-based generator for (scenario seed, stream key)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *key])))


@dataclass
class PacketTrace:
    flow_id: np.ndarray  # int64
    send_time: np.ndarray  # s
    arrival_time: np.ndarray  # s, NaN when dropped
    size: np.ndarray  # bytes, int64
    dropped: np.ndarray  # bool
    hops: list | None = None  # optional (queue_id, packet_index, enter, depart) records

    def __len__(self) -> int:
        return len(self.flow_id)

    @property
    def delivered(self) -> np.ndarray:
        return ~self.dropped

    @property
    def empty(self) -> bool:
        """True when no packet was delivered; not an error."""
        return not bool(np.any(self.delivered))

    def delays(self) -> np.ndarray:
        d = self.delivered
        return self.arrival_time[d] - self.send_time[d]

    def equals(self, other: "PacketTrace") -> bool:
        return all(
            np.array_equal(getattr(self, k), getattr(other, k), equal_nan=(k == "arrival_time"))
            for k in ("flow_id", "send_time", "arrival_time", "size", "dropped")
        )

    def save_npz(self, path) -> None:
        with open(path, "wb") as fh:
            np.savez(fh, flow_id=self.flow_id, send_time=self.send_time, arrival_time=self.arrival_time,
                     size=self.size, dropped=self.dropped)

    @classmethod
    def load_npz(cls, path) -> "PacketTrace":
        with np.load(path) as z:
            return cls(z["flow_id"], z["send_time"], z["arrival_time"], z["size"], z["dropped"])

    def write_ndjson(self, path) -> None:
        with open(path, "w") as fh:
            for i in range(len(self)):
                arr = None if self.dropped[i] else float(self.arrival_time[i])
                fh.write(json.dumps({
                    "flow_id": int(self.flow_id[i]), "send_time": float(self.send_time[i]),
                    "arrival_time": arr, "size": int(self.size[i]), "dropped": bool(self.dropped[i]),
                }) + "\n")

    @classmethod
    def read_ndjson(cls, path) -> "PacketTrace":
        recs = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
        return cls(
            np.array([r["flow_id"] for r in recs], dtype=np.int64),
            np.array([r["send_time"] for r in recs], dtype=np.float64),
            np.array([np.nan if r["arrival_time"] is None else r["arrival_time"] for r in recs], dtype=np.float64),
            np.array([r["size"] for r in recs], dtype=np.int64),
            np.array([r["dropped"] for r in recs], dtype=bool),
        )


def simulate(scenario: Scenario, record_hops: bool = False) -> PacketTrace:
    """Run ``scenario`` to completion and return the per-packet trace.

    Per hop a packet joins the egress queue of the link (or is dropped when
    the buffer is full), waits, transmits for size*8/capacity and then incurs
    the propagation delay. In perturbed mode capacity is derated and a
    processing delay plus Gaussian jitter (clamped at zero) is added per hop.
    """
    scenario.validate()
    topo = scenario.topology
    links = topo._link_index()
    fid = scenario.fidelity
    perturbed = isinstance(fid, Perturbed)
    derate = fid.derating if perturbed else 1.0

    qindex = {}
    for q in topo.queues:
        qindex[q.link_id] = q
    queue_ids = sorted(q.id for q in topo.queues)
    qpos = {qid: i for i, qid in enumerate(queue_ids)}

    flow_ids, sends, sizes = [], [], []
    for k, f in enumerate(scenario.flows):
        t = f.traffic.send_times(stream(scenario.seed, TRAFFIC_STREAM, k), scenario.duration)
        s = f.traffic.size.sample(stream(scenario.seed, SIZE_STREAM, k), len(t))
        flow_ids.append(np.full(len(t), f.id, dtype=np.int64))
        sends.append(t)
        sizes.append(s)
    if flow_ids:
        flow_id = np.concatenate(flow_ids)
        send = np.concatenate(sends)
        size = np.concatenate(sizes)
    else:
        flow_id, send, size = np.empty(0, np.int64), np.empty(0), np.empty(0, np.int64)
    n = len(flow_id)
    arrival = np.full(n, np.nan)
    dropped = np.zeros(n, dtype=bool)

    # per-packet hop tables (python lists are faster than numpy scalars in the loop)
    path_q, path_tx, path_lat = {}, {}, {}
    for f in scenario.flows:
        path_q[f.id] = [qpos[qindex[lid].id] for lid in f.path]
        path_tx[f.id] = [8.0 / (links[lid].capacity * derate) for lid in f.path]
        path_lat[f.id] = [links[lid].prop_delay for lid in f.path]
    buffers = [0] * len(queue_ids)
    for q in topo.queues:
        buffers[qpos[q.id]] = q.buffer_size

    jitter_rng = stream(scenario.seed, JITTER_STREAM)
    proc = fid.processing_delay if perturbed else 0.0
    jsd = fid.jitter_sd if perturbed else 0.0

    fl = flow_id.tolist()
    sz = size.tolist()
    queues = [deque() for _ in queue_ids]
    hop_of = [0] * n
    hops = [] if record_hops else None
    enter_time = [0.0] * n

    events = [(float(send[i]), ARRIVE, i, i) for i in range(n)]
    heapq.heapify(events)
    seq = n
    push, pop = heapq.heappush, heapq.heappop

    while events:
        t, kind, _, obj = pop(events)
        if kind == ARRIVE:
            i = obj
            h = hop_of[i]
            qi = path_q[fl[i]][h]
            q = queues[qi]
            if len(q) >= buffers[qi]:
                dropped[i] = True
                continue
            q.append(i)
            enter_time[i] = t
            if len(q) == 1:
                push(events, (t + sz[i] * path_tx[fl[i]][h], DEPART, seq, qi))
                seq += 1
        else:
            qi = obj
            q = queues[qi]
            i = q.popleft()
            if q:
                j = q[0]
                push(events, (t + sz[j] * path_tx[fl[j]][hop_of[j]], DEPART, seq, qi))
                seq += 1
            if record_hops:
                hops.append((queue_ids[qi], i, enter_time[i], t))
            h = hop_of[i]
            lat = path_lat[fl[i]][h]
            if perturbed:
                extra = proc + (jitter_rng.normal(0.0, jsd) if jsd > 0 else 0.0)
                lat += extra if extra > 0.0 else 0.0
            if h + 1 == len(path_q[fl[i]]):
                arrival[i] = t + lat
            else:
                hop_of[i] = h + 1
                push(events, (t + lat, ARRIVE, seq, i))
                seq += 1

    order = np.lexsort((send, flow_id))
    if record_hops:
        rank = np.empty(n, dtype=np.int64)
        rank[order] = np.arange(n)
        hops = [(qid, int(rank[i]), a, b) for qid, i, a, b in hops]
    return PacketTrace(flow_id[order], send[order], arrival[order], size[order], dropped[order], hops)

