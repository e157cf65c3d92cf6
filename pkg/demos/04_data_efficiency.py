"""How much real data does the donor save?  A small scratch-vs-fine-tuned sweep."""
import logging

from netxfer.dataio import Normalizer, build_dataset
from netxfer.evalx import efficiency_sweep
from netxfer.netsim import Perturbed, ScenarioTemplate, gen_scenarios
from netxfer.rnmodel import ModelConfig, RouteNetModel, TrainConfig, train
from netxfer.transfer import DonorSnapshot

logging.basicConfig(level=logging.INFO, format="%(message)s")

ideal = build_dataset(gen_scenarios(ScenarioTemplate(duration=(1.0, 1.0)), 80, seed=1))
real = build_dataset(gen_scenarios(ScenarioTemplate(duration=(1.0, 1.0), fidelity=Perturbed()), 40, seed=2))
for i, w in enumerate(real):
    w.scenario_id = 1000 + i

cfg = ModelConfig(embedding_dim=16, mpa_iterations=4, encoder_hidden=(16,), readout_hidden=(16, 16))
m = RouteNetModel(cfg, Normalizer.fit(ideal[:70]))
train(m, ideal[:70], ideal[70:], TrainConfig(lr=3e-3, max_epochs=30, patience=8, batch_size=10))
donor = DonorSnapshot.from_model(m, train_lr=3e-3)

curve = efficiency_sweep(donor, real[:20], real[20:26], real[26:], counts=[3, 10, 20], seeds=[0, 1],
                         scratch_config=TrainConfig(lr=3e-3, max_epochs=40, patience=10, batch_size=2),
                         finetune_config=TrainConfig(lr=3e-4, max_epochs=40, patience=10, batch_size=2))
print("\n  n   scratch  finetuned  advantage")
for r in curve.rows():
    print(f"{r['count']:3d}  {r['scratch_mape']:7.2f}%  {r['finetuned_mape']:8.2f}%  {100 * r['advantage']:+7.1f}%")
for w in curve.warnings:
    print("note:", w)
