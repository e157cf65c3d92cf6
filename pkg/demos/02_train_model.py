"""Window a small simulated corpus and fit the delay model to it."""
import numpy as np

from netxfer.dataio import FLOW_FEATURES, Normalizer, build_dataset, split
from netxfer.evalx import evaluate
from netxfer.netsim import ScenarioTemplate, gen_scenarios
from netxfer.rnmodel import ModelConfig, RouteNetModel, TrainConfig, train

scen = gen_scenarios(ScenarioTemplate(duration=(1.0, 1.0)), 40, seed=7)
data = build_dataset(scen, window_length=0.1)

ws = data[0]
print("one scenario:", ws.n_windows, "windows x", ws.n_flows, "flows, features", FLOW_FEATURES)
print("active flow-windows:", int(ws.active.sum()), "of", ws.active.size)
print("window 3 targets (ms):", np.round(1e3 * ws.target[3], 3))

parts = split([w.scenario_id for w in data], (0.7, 0.15, 0.15), seed=0)
by_id = {w.scenario_id: w for w in data}
tr, va, ev = ([by_id[i] for i in ids] for ids in (parts.training, parts.validation, parts.evaluation))

cfg = ModelConfig(embedding_dim=16, mpa_iterations=4, encoder_hidden=(16,), readout_hidden=(16, 16))
model = RouteNetModel(cfg, Normalizer.fit(tr))
res = train(model, tr, va, TrainConfig(lr=3e-3, max_epochs=30, patience=8, batch_size=7))

for h in res.history[::5]:
    print(f"epoch {h['epoch']:3d}  train {100 * h['train_loss']:6.2f}%  val {100 * h['val_loss']:6.2f}%")
print("best epoch", res.best_epoch)

rep = evaluate(model, ev)
print("held-out:", {k: round(v, 4) for k, v in rep.summary().items()})
