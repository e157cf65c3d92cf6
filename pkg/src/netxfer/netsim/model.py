"""Scenario description types: topology, traffic models, fidelity, flows."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np


class ConfigurationError(ValueError):
    """A scenario or topology violates its structural invariants."""


@dataclass(frozen=True)
class Link:
    id: int
    src: int
    dst: int
    capacity: float  # bits/s
    prop_delay: float  # s


@dataclass(frozen=True)
class Queue:
    id: int
    link_id: int
    buffer_size: int  # packets, including the one in transmission


@dataclass
class Topology:
    nodes: list[int]
    links: list[Link]
    queues: list[Queue]

    def validate(self) -> None:
        nodes = set(self.nodes)
        link_ids = set()
        for link in self.links:
            if link.id in link_ids:
                raise ConfigurationError(f"duplicate link id {link.id}")
            link_ids.add(link.id)
            if link.capacity <= 0:
                raise ConfigurationError(f"link {link.id}: capacity must be > 0")
            if link.prop_delay < 0:
                raise ConfigurationError(f"link {link.id}: propagation delay must be >= 0")
            if link.src not in nodes or link.dst not in nodes:
                raise ConfigurationError(f"link {link.id} references an unknown node")
        per_link: dict[int, int] = {}
        for q in self.queues:
            if q.link_id not in link_ids:
                raise ConfigurationError(f"queue {q.id} references nonexistent link {q.link_id}")
            if q.buffer_size < 1:
                raise ConfigurationError(f"queue {q.id}: buffer size must be >= 1")
            per_link[q.link_id] = per_link.get(q.link_id, 0) + 1
        for lid in link_ids:
            if per_link.get(lid, 0) != 1:
                raise ConfigurationError(f"link {lid} must have exactly one queue")

    def link(self, link_id: int) -> Link:
        return self._link_index()[link_id]

    def queue_of(self, link_id: int) -> Queue:
        for q in self.queues:
            if q.link_id == link_id:
                return q
        raise ConfigurationError(f"no queue for link {link_id}")

    def _link_index(self) -> dict[int, Link]:
        return {lk.id: lk for lk in self.links}


# ------------------------------------------------------------------ traffic


@dataclass(frozen=True)
class PacketSize:
    kind: str = "fixed"  # "fixed" | "exponential"
    mean: float = 1000.0  # bytes

    def __post_init__(self):
        if self.kind not in ("fixed", "exponential"):
            raise ConfigurationError(f"unknown packet size model {self.kind!r}")
        if self.mean <= 0:
            raise ConfigurationError("packet size must be > 0")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "fixed":
            return np.full(n, int(round(self.mean)), dtype=np.int64)
        return np.maximum(1, np.rint(rng.exponential(self.mean, size=n))).astype(np.int64)


def _times_from_gaps(gaps_fn, duration: float, mean_gap: float) -> np.ndarray:
    out = []
    t = 0.0
    chunk = max(16, int(duration / mean_gap * 1.1) + 16)
    while True:
        gaps = gaps_fn(chunk)
        times = t + np.cumsum(gaps)
        keep = times[times < duration]
        out.append(keep)
        if len(keep) < len(times):
            break
        t = float(times[-1])
    return np.concatenate(out) if out else np.empty(0)


@dataclass(frozen=True)
class Poisson:
    rate: float  # packets/s
    size: PacketSize = field(default_factory=PacketSize)
    kind: str = field(default="poisson", init=False)

    def validate(self):
        if self.rate <= 0:
            raise ConfigurationError("Poisson rate must be > 0")

    def mean_rate(self) -> float:
        return self.rate

    def send_times(self, rng: np.random.Generator, duration: float) -> np.ndarray:
        return _times_from_gaps(lambda n: rng.exponential(1.0 / self.rate, size=n), duration, 1.0 / self.rate)


@dataclass(frozen=True)
class OnOff:
    """Exponential ON/OFF periods, constant packet rate while ON."""

    on_mean: float  # s
    off_mean: float  # s
    on_rate: float  # packets/s
    size: PacketSize = field(default_factory=PacketSize)
    kind: str = field(default="onoff", init=False)

    def validate(self):
        if min(self.on_mean, self.off_mean, self.on_rate) <= 0:
            raise ConfigurationError("On/Off durations and rate must be > 0")

    def mean_rate(self) -> float:
        return self.on_rate * self.on_mean / (self.on_mean + self.off_mean)

    def send_times(self, rng: np.random.Generator, duration: float) -> np.ndarray:
        out = []
        on = rng.random() < self.on_mean / (self.on_mean + self.off_mean)
        t = 0.0
        gap = 1.0 / self.on_rate
        while t < duration:
            period = rng.exponential(self.on_mean if on else self.off_mean)
            if on:
                end = min(t + period, duration)
                out.append(np.arange(t + rng.random() * gap, end, gap))
            t += period
            on = not on
        times = np.concatenate(out) if out else np.empty(0)
        return times[times < duration]


@dataclass(frozen=True)
class HeavyTail:
    """Lognormal inter-arrival times, a stand-in for measured backbone traces."""

    mu: float
    sigma: float
    size: PacketSize = field(default_factory=PacketSize)
    kind: str = field(default="heavytail", init=False)

    def validate(self):
        if self.sigma <= 0:
            raise ConfigurationError("HeavyTail sigma must be > 0")

    def mean_rate(self) -> float:
        return float(np.exp(-(self.mu + 0.5 * self.sigma**2)))

    def send_times(self, rng: np.random.Generator, duration: float) -> np.ndarray:
        return _times_from_gaps(lambda n: rng.lognormal(self.mu, self.sigma, size=n), duration, 1.0 / self.mean_rate())


@dataclass(frozen=True)
class Replay:
    """Replays inter-arrival times read from a text file (one value per line), cycling."""

    path: str
    size: PacketSize = field(default_factory=PacketSize)
    kind: str = field(default="replay", init=False)

    def gaps(self) -> np.ndarray:
        p = Path(self.path)
        if not p.exists():
            raise ConfigurationError(f"replay file {self.path} does not exist")
        text = p.read_text().split()
        if not text:
            raise ConfigurationError(f"replay file {self.path} is empty")
        try:
            gaps = np.array([float(x) for x in text])
        except ValueError:
            raise ConfigurationError(f"replay file {self.path} has non-numeric entries") from None
        if gaps.size == 0:
            raise ConfigurationError(f"replay file {self.path} is empty")
        if np.any(gaps <= 0):
            raise ConfigurationError(f"replay file {self.path} has nonpositive inter-arrival times")
        return gaps

    def validate(self):
        self.gaps()

    def mean_rate(self) -> float:
        return 1.0 / float(np.mean(self.gaps()))

    def send_times(self, rng: np.random.Generator, duration: float) -> np.ndarray:
        gaps = self.gaps()
        reps = int(np.ceil(duration / gaps.sum())) + 1
        times = np.cumsum(np.tile(gaps, reps))
        return times[times < duration]


TrafficModel = Union[Poisson, OnOff, HeavyTail, Replay]


# ------------------------------------------------------------------ fidelity & scenario


@dataclass(frozen=True)
class Ideal:
    kind: str = field(default="ideal", init=False)


@dataclass(frozen=True)
class Perturbed:
    """Hardware-like deviations from the ideal store-and-forward model."""

    processing_delay: float = 50e-6  # s per hop
    derating: float = 0.95  # fraction of nominal capacity
    jitter_sd: float = 10e-6  # s
    kind: str = field(default="perturbed", init=False)

    def validate(self):
        if not (0.0 < self.derating <= 1.0):
            raise ConfigurationError("derating must be in (0, 1]")
        if self.processing_delay < 0 or self.jitter_sd < 0:
            raise ConfigurationError("processing delay and jitter must be >= 0")


Fidelity = Union[Ideal, Perturbed]


@dataclass(frozen=True)
class Flow:
    id: int
    path: tuple[int, ...]  # link ids, in traversal order
    traffic: TrafficModel


@dataclass
class Scenario:
    id: int
    topology: Topology
    flows: list[Flow]
    duration: float
    seed: int
    fidelity: Fidelity = field(default_factory=Ideal)

    def validate(self) -> None:
        self.topology.validate()
        if self.duration <= 0:
            raise ConfigurationError("duration must be > 0")
        if isinstance(self.fidelity, Perturbed):
            self.fidelity.validate()
        links = self.topology._link_index()
        seen = set()
        for f in self.flows:
            if f.id in seen:
                raise ConfigurationError(f"duplicate flow id {f.id}")
            seen.add(f.id)
            if not f.path:
                raise ConfigurationError(f"flow {f.id} has an empty path")
            for lid in f.path:
                if lid not in links:
                    raise ConfigurationError(f"flow {f.id} path references nonexistent queue/link {lid}")
            for a, b in zip(f.path[:-1], f.path[1:]):
                if links[a].dst != links[b].src:
                    raise ConfigurationError(f"flow {f.id} path is not contiguous at links {a}->{b}")
            f.traffic.validate()

    def with_fidelity(self, fidelity: Fidelity) -> "Scenario":
        return Scenario(self.id, self.topology, list(self.flows), self.duration, self.seed, fidelity)
