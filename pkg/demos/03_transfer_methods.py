"""Donor on ideal data, receivers on a handful of perturbed scenarios.

Compares a few manual block policies with the three automated methods.
"""
from netxfer.dataio import Normalizer, build_dataset
from netxfer.evalx import evaluate
from netxfer.netsim import Perturbed, ScenarioTemplate, gen_scenarios
from netxfer.rnmodel import ModelConfig, RouteNetModel, TrainConfig, train
from netxfer.transfer import (
    GTOT, L2SP, AutoFreeze, BlockPolicy, DonorSnapshot, Manual, enumerate_valid_policies, finetune, finetune_lr,
    prepare_receiver,
)

print("valid policies:", " ".join(p.code for p in enumerate_valid_policies()))
print("RTF is rejected because:", BlockPolicy.from_code("RTF").violations()[0])

ideal = build_dataset(gen_scenarios(ScenarioTemplate(duration=(1.0, 1.0)), 60, seed=1))
real = build_dataset(gen_scenarios(ScenarioTemplate(duration=(1.0, 1.0), fidelity=Perturbed()), 30, seed=2))
for i, w in enumerate(real):
    w.scenario_id = 1000 + i
few, val, held_out = real[:8], real[8:14], real[14:]

cfg = ModelConfig(embedding_dim=16, mpa_iterations=4, encoder_hidden=(16,), readout_hidden=(16, 16))
donor_model = RouteNetModel(cfg, Normalizer.fit(ideal[:50]))
train(donor_model, ideal[:50], ideal[50:], TrainConfig(lr=3e-3, max_epochs=30, patience=8, batch_size=10))
donor = DonorSnapshot.from_model(donor_model, train_lr=3e-3)
print(f"donor on ideal held-out  {evaluate(donor_model, ideal[50:]).mape:6.2f}%")
print(f"donor on perturbed data  {evaluate(donor_model, held_out).mape:6.2f}%")

ft = TrainConfig(lr=finetune_lr(donor.train_lr), max_epochs=40, patience=10, batch_size=2)
methods = [Manual(BlockPolicy.from_code(c)) for c in ("FFT", "FTR", "TTT")]
methods += [AutoFreeze(), L2SP(), GTOT()]
for m in methods:
    receiver = prepare_receiver(donor, m)
    res = finetune(receiver, few, val, m, ft, donor=donor)
    extra = f" froze {res.freeze_events}" if res.freeze_events else ""
    print(f"{m.name:>10} {m.policy.code}  {evaluate(receiver, held_out).mape:6.2f}%{extra}")
