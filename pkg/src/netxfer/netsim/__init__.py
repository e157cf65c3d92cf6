"""Deterministic FIFO network simulator with ideal and perturbed fidelity modes."""
from .generate import ScenarioGenerationError, ScenarioTemplate, gen_scenario, gen_scenarios, link_utilization
from .io import load_scenario, save_scenario, scenario_from_dict, scenario_to_dict
from .model import (
    ConfigurationError, Flow, HeavyTail, Ideal, Link, OnOff, PacketSize, Perturbed, Poisson, Queue, Replay,
    Scenario, Topology,
)
from .simulator import PacketTrace, simulate

__all__ = [
    "ConfigurationError", "Flow", "HeavyTail", "Ideal", "Link", "OnOff", "PacketSize", "PacketTrace", "Perturbed",
    "Poisson", "Queue", "Replay", "Scenario", "ScenarioGenerationError", "ScenarioTemplate", "Topology",
    "gen_scenario", "gen_scenarios", "link_utilization", "load_scenario", "save_scenario", "scenario_from_dict",
    "scenario_to_dict", "simulate",
]
