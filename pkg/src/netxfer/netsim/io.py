"""Scenario files: one JSON object per file, ``"schema": "scenario/1"``."""
from __future__ import annotations

import json
from pathlib import Path

from .model import (
    ConfigurationError, Flow, HeavyTail, Ideal, Link, OnOff, PacketSize, Perturbed, Poisson, Queue, Replay,
    Scenario, Topology,
)

SCHEMA = "scenario/1"


def _size_to_dict(s: PacketSize) -> dict:
    return {"kind": s.kind, "mean": s.mean}


def traffic_to_dict(tm) -> dict:
    d = {"kind": tm.kind, "size": _size_to_dict(tm.size)}
    if isinstance(tm, Poisson):
        d["rate"] = tm.rate
    elif isinstance(tm, OnOff):
        d.update(on_mean=tm.on_mean, off_mean=tm.off_mean, on_rate=tm.on_rate)
    elif isinstance(tm, HeavyTail):
        d.update(mu=tm.mu, sigma=tm.sigma)
    elif isinstance(tm, Replay):
        d["path"] = tm.path
    return d


def traffic_from_dict(d: dict):
    size = PacketSize(**d.get("size", {}))
    kind = d["kind"]
    if kind == "poisson":
        return Poisson(d["rate"], size)
    if kind == "onoff":
        return OnOff(d["on_mean"], d["off_mean"], d["on_rate"], size)
    if kind == "heavytail":
        return HeavyTail(d["mu"], d["sigma"], size)
    if kind == "replay":
        return Replay(d["path"], size)
    raise ConfigurationError(f"unknown traffic kind {kind!r}")


def fidelity_to_dict(f) -> dict:
    if isinstance(f, Perturbed):
        return {"kind": "perturbed", "processing_delay": f.processing_delay, "derating": f.derating,
                "jitter_sd": f.jitter_sd}
    return {"kind": "ideal"}


def fidelity_from_dict(d: dict):
    if d["kind"] == "ideal":
        return Ideal()
    if d["kind"] == "perturbed":
        return Perturbed(**{k: v for k, v in d.items() if k != "kind"})
    raise ConfigurationError(f"unknown fidelity {d['kind']!r}")


def scenario_to_dict(s: Scenario) -> dict:
    return {
        "schema": SCHEMA,
        "id": s.id,
        "duration": s.duration,
        "seed": s.seed,
        "fidelity": fidelity_to_dict(s.fidelity),
        "topology": {
            "nodes": list(s.topology.nodes),
            "links": [{"id": lk.id, "src": lk.src, "dst": lk.dst, "capacity": lk.capacity,
                       "prop_delay": lk.prop_delay} for lk in s.topology.links],
            "queues": [{"id": q.id, "link_id": q.link_id, "buffer_size": q.buffer_size} for q in s.topology.queues],
        },
        "flows": [{"id": f.id, "path": list(f.path), "traffic": traffic_to_dict(f.traffic)} for f in s.flows],
    }


def scenario_from_dict(d: dict) -> Scenario:
    if d.get("schema") != SCHEMA:
        raise ConfigurationError(f"unsupported scenario schema {d.get('schema')!r}")
    topo = Topology(
        list(d["topology"]["nodes"]),
        [Link(**lk) for lk in d["topology"]["links"]],
        [Queue(**q) for q in d["topology"]["queues"]],
    )
    flows = [Flow(f["id"], tuple(f["path"]), traffic_from_dict(f["traffic"])) for f in d["flows"]]
    return Scenario(d["id"], topo, flows, d["duration"], d["seed"], fidelity_from_dict(d["fidelity"]))


def save_scenario(s: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(s), indent=1, sort_keys=True))


def load_scenario(path) -> Scenario:
    return scenario_from_dict(json.loads(Path(path).read_text()))
