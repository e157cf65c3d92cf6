"""Random scenario generation from a template of documented ranges."""
from __future__ import annotations

from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .model import (
    Fidelity, Flow, HeavyTail, Ideal, Link, OnOff, PacketSize, Poisson, Queue, Scenario, Topology,
)


class ScenarioGenerationError(ValueError):
    pass


TRAFFIC_KINDS = ("poisson", "onoff", "heavytail")


@dataclass
class ScenarioTemplate:
    """Ranges scenarios are drawn from. ``(lo, hi)`` pairs are inclusive."""

    nodes: tuple[int, int] = (5, 8)
    extra_edge_prob: float = 0.3
    capacities_mbps: tuple[float, ...] = (10.0, 25.0, 40.0, 100.0)
    prop_delay: tuple[float, float] = (1e-5, 1e-4)
    buffer_size: int = 1000
    flows: tuple[int, int] = (4, 10)
    traffic: str = "poisson"  # poisson | onoff | heavytail | mixed
    packet_size: tuple[float, float] = (500.0, 1500.0)
    packet_size_kind: str = "fixed"
    max_utilization: tuple[float, float] = (0.2, 0.8)
    utilization_cap: float = 0.9
    onoff_on_mean: tuple[float, float] = (0.05, 0.2)
    onoff_off_mean: tuple[float, float] = (0.05, 0.2)
    heavytail_sigma: float = 1.0
    duration: tuple[float, float] = (5.0, 20.0)
    fidelity: Fidelity = field(default_factory=Ideal)
    # when set, topology and routing are drawn once from this seed and shared
    topology_seed: int | None = None

    def validate(self) -> None:
        if self.nodes[0] < 2 or self.nodes[0] > self.nodes[1]:
            raise ScenarioGenerationError("nodes: need 2 <= min <= max so that a source-destination path exists")
        if self.flows[0] < 1 or self.flows[0] > self.flows[1]:
            raise ScenarioGenerationError("flows: need 1 <= min <= max")
        if not self.capacities_mbps or min(self.capacities_mbps) <= 0:
            raise ScenarioGenerationError("capacities_mbps: need at least one positive capacity")
        if not (0 < self.max_utilization[0] <= self.max_utilization[1] <= self.utilization_cap):
            raise ScenarioGenerationError("max_utilization: need 0 < lo <= hi <= utilization_cap")
        if self.traffic not in TRAFFIC_KINDS + ("mixed",):
            raise ScenarioGenerationError(f"traffic: unknown kind {self.traffic!r}")
        if self.duration[0] <= 0 or self.duration[0] > self.duration[1]:
            raise ScenarioGenerationError("duration: need 0 < lo <= hi")
        if self.packet_size[0] <= 0 or self.packet_size[0] > self.packet_size[1]:
            raise ScenarioGenerationError("packet_size: need 0 < lo <= hi")
        if self.buffer_size < 1:
            raise ScenarioGenerationError("buffer_size: need >= 1")


def _rng(*key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in key])))


def _topology(t: ScenarioTemplate, rng: np.random.Generator) -> tuple[Topology, nx.DiGraph]:
    n = int(rng.integers(t.nodes[0], t.nodes[1] + 1))
    # random spanning tree plus extra edges keeps every node pair connected
    edges = set()
    order = rng.permutation(n)
    for k in range(1, n):
        a, b = int(order[k]), int(order[rng.integers(0, k)])
        edges.add((min(a, b), max(a, b)))
    for a in range(n):
        for b in range(a + 1, n):
            if (a, b) not in edges and rng.random() < t.extra_edge_prob:
                edges.add((a, b))
    links, queues = [], []
    g = nx.DiGraph()
    g.add_nodes_from(range(n))
    for a, b in sorted(edges):
        cap = float(rng.choice(t.capacities_mbps)) * 1e6
        prop = float(rng.uniform(*t.prop_delay))
        for src, dst in ((a, b), (b, a)):
            lid = len(links)
            links.append(Link(lid, src, dst, cap, prop))
            queues.append(Queue(lid, lid, t.buffer_size))
            g.add_edge(src, dst, id=lid, weight=float(rng.uniform(1.0, 10.0)))
    return Topology(list(range(n)), links, queues), g


def _routes(t: ScenarioTemplate, g: nx.DiGraph, rng: np.random.Generator, nflows: int) -> list[tuple[int, ...]]:
    n = g.number_of_nodes()
    paths = []
    for _ in range(nflows):
        src = int(rng.integers(0, n))
        dst = int(rng.integers(0, n - 1))
        dst = dst + 1 if dst >= src else dst
        try:
            nodes = nx.shortest_path(g, src, dst, weight="weight")
        except nx.NetworkXNoPath as exc:
            raise ScenarioGenerationError(f"no path from node {src} to {dst}") from exc
        paths.append(tuple(g.edges[u, v]["id"] for u, v in zip(nodes[:-1], nodes[1:])))
    return paths


def _traffic(kind: str, rate: float, size: PacketSize, t: ScenarioTemplate, rng: np.random.Generator):
    if kind == "poisson":
        return Poisson(rate, size)
    if kind == "onoff":
        on = float(rng.uniform(*t.onoff_on_mean))
        off = float(rng.uniform(*t.onoff_off_mean))
        return OnOff(on, off, rate * (on + off) / on, size)
    sigma = t.heavytail_sigma
    return HeavyTail(float(-np.log(rate) - 0.5 * sigma**2), sigma, size)


def gen_scenario(template: ScenarioTemplate, index: int, seed: int) -> Scenario:
    t = template
    rng = _rng(seed, index, 0)
    topo_rng = _rng(t.topology_seed, 0, 1) if t.topology_seed is not None else rng
    topo, g = _topology(t, topo_rng)
    nflows = int(topo_rng.integers(t.flows[0], t.flows[1] + 1))
    paths = _routes(t, g, topo_rng, nflows)

    caps = {lk.id: lk.capacity for lk in topo.links}
    weights = rng.uniform(0.2, 1.0, size=nflows)
    sizes = rng.uniform(*t.packet_size, size=nflows)
    load = {}
    for w, s, path in zip(weights, sizes, paths):
        for lid in path:
            load[lid] = load.get(lid, 0.0) + w * s * 8.0 / caps[lid]
    target = float(rng.uniform(*t.max_utilization))
    factor = target / max(load.values())
    flows = []
    for k, (w, s, path) in enumerate(zip(weights, sizes, paths)):
        kind = t.traffic if t.traffic != "mixed" else TRAFFIC_KINDS[int(rng.integers(0, 3))]
        traffic = _traffic(kind, float(w * factor), PacketSize(t.packet_size_kind, float(s)), t, rng)
        flows.append(Flow(k, path, traffic))
    duration = float(rng.uniform(*t.duration))
    sim_seed = int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, np.uint64)[0])
    return Scenario(index, topo, flows, duration, sim_seed, t.fidelity)


def gen_scenarios(template: ScenarioTemplate, count: int, seed: int) -> list[Scenario]:
    """Draw ``count`` scenarios with ids ``0..count-1``, reproducibly from ``seed``."""
    if count <= 0:
        raise ScenarioGenerationError("count must be > 0")
    template.validate()
    return [gen_scenario(template, i, seed) for i in range(count)]


def link_utilization(scenario: Scenario) -> dict[int, float]:
    """Offered load over capacity per link, from the traffic models' mean rates."""
    caps = {lk.id: lk.capacity for lk in scenario.topology.links}
    out = {lid: 0.0 for lid in caps}
    for f in scenario.flows:
        bps = f.traffic.mean_rate() * f.traffic.size.mean * 8.0
        for lid in f.path:
            out[lid] += bps / caps[lid]
    return out
