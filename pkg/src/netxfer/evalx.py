"""Metrics, error distributions and the data-efficiency sweep."""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataio import WindowedScenario
from .rnmodel import BatchCache, ModelConfig, RouteNetModel, TrainConfig, train
from .transfer import BlockPolicy, DonorSnapshot, Manual, apply_policy, finetune

log = logging.getLogger(__name__)


class MetricError(ValueError):
    pass


def _checked(pred, true) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64).reshape(-1)
    t = np.asarray(true, dtype=np.float64).reshape(-1)
    if p.shape != t.shape:
        raise MetricError(f"length mismatch: {p.size} predictions, {t.size} targets")
    if p.size == 0:
        raise MetricError("MAPE of an empty set is undefined")
    if not np.all(t > 0):
        raise MetricError("targets must be strictly positive")
    return p, t


def mape(pred, true) -> float:
    """Mean absolute percentage error, in percent."""
    p, t = _checked(pred, true)
    return float(100.0 * np.mean(np.abs(p - t) / t))


def relative_errors(pred, true) -> np.ndarray:
    p, t = _checked(pred, true)
    return (p - t) / t


def normalized_mape(report: "EvalReport | float", baseline: "EvalReport | float") -> float:
    """Ratio of MAPEs; below 1 means ``report`` beats ``baseline``."""
    a = report.mape if isinstance(report, EvalReport) else float(report)
    b = baseline.mape if isinstance(baseline, EvalReport) else float(baseline)
    if b == 0:
        raise MetricError("baseline MAPE is zero")
    return a / b


@dataclass
class ErrorPdf:
    edges: np.ndarray
    density: np.ndarray
    mean_error: float

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)


def error_pdf(pred, true, bins: int | Sequence[float] = 50) -> ErrorPdf:
    """Density histogram of the signed relative error (pred - true) / true."""
    err = relative_errors(pred, true)
    if np.isscalar(bins):
        if bins < 2:
            raise MetricError("need at least 2 bins")
        lo, hi = float(err.min()), float(err.max())
        if hi - lo < 1e-12:
            lo, hi = lo - 0.5, hi + 0.5
        edges = np.linspace(lo, hi, int(bins) + 1)
    else:
        edges = np.asarray(bins, dtype=np.float64)
        if edges.size < 3:
            raise MetricError("need at least 2 bins")
    counts, edges = np.histogram(err, bins=edges)
    if counts.sum() == 0:
        raise MetricError("no errors fall inside the bin range")
    density = counts / (counts.sum() * np.diff(edges))
    return ErrorPdf(edges, density, float(err.mean()))


@dataclass
class EvalReport:
    scenario_ids: np.ndarray
    flow_ids: np.ndarray
    windows: np.ndarray
    predicted: np.ndarray
    true: np.ndarray

    @property
    def count(self) -> int:
        return int(self.true.size)

    @property
    def mape(self) -> float:
        return mape(self.predicted, self.true)

    def pdf(self, bins=50) -> ErrorPdf:
        return error_pdf(self.predicted, self.true, bins)

    def summary(self) -> dict:
        err = relative_errors(self.predicted, self.true)
        return {"mape": self.mape, "samples": self.count, "mean_signed_error": float(err.mean()),
                "median_abs_error": float(np.median(np.abs(err)))}

    def write_ndjson(self, path) -> None:
        with open(path, "w") as fh:
            for s, f, w, p, t in zip(self.scenario_ids, self.flow_ids, self.windows, self.predicted, self.true):
                fh.write(json.dumps({"scenario": int(s), "flow": int(f), "window": int(w),
                                     "predicted": float(p), "true": float(t),
                                     "relative_error": float((p - t) / t)}) + "\n")


def evaluate(model: RouteNetModel, scenarios: Sequence[WindowedScenario], batch_size: int = 16) -> EvalReport:
    """Predictions on every active flow-window of ``scenarios``."""
    if not scenarios:
        raise MetricError("nothing to evaluate")
    cache = BatchCache(model.normalizer, max_entries=1)
    cols = {k: [] for k in ("s", "f", "w", "p", "t")}
    for i in range(0, len(scenarios), batch_size):
        chunk = list(scenarios[i:i + batch_size])
        b = cache.get(chunk)
        pred = model.predict_batch(b).reshape(b.n_windows, b.n_flows)
        for k, ws in enumerate(chunk):
            lo = b.flow_offsets[k]
            p = pred[:ws.n_windows, lo:lo + ws.n_flows]
            act = ws.active
            w_idx, f_idx = np.nonzero(act)
            cols["s"].append(np.full(w_idx.size, ws.scenario_id))
            cols["f"].append(np.asarray(ws.flow_ids)[f_idx])
            cols["w"].append(w_idx)
            cols["p"].append(p[act])
            cols["t"].append(ws.target[act])
    return EvalReport(*(np.concatenate(cols[k]) for k in ("s", "f", "w", "p", "t")))


def write_metrics_csv(rows: Sequence[dict], path) -> None:
    if not rows:
        raise MetricError("no rows to write")
    keys = list(rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


# ---------------------------------------------------------------- data efficiency


@dataclass
class EfficiencyPoint:
    count: int
    scratch_mape: float
    finetuned_mape: float
    seeds: int
    scratch_per_seed: list[float] = field(default_factory=list)
    finetuned_per_seed: list[float] = field(default_factory=list)

    @property
    def advantage(self) -> float:
        """Relative MAPE reduction of fine-tuning over training from scratch."""
        return 1.0 - self.finetuned_mape / self.scratch_mape


@dataclass
class EfficiencyCurve:
    points: list[EfficiencyPoint]
    policy: str
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        counts = [p.count for p in self.points]
        if any(b <= a for a, b in zip(counts, counts[1:])):
            raise MetricError("efficiency curve counts must be strictly increasing")

    def rows(self) -> list[dict]:
        return [{"count": p.count, "scratch_mape": p.scratch_mape, "finetuned_mape": p.finetuned_mape,
                 "advantage": p.advantage, "seeds": p.seeds} for p in self.points]

    def write_csv(self, path) -> None:
        write_metrics_csv(self.rows(), path)

    def point(self, count: int) -> EfficiencyPoint:
        for p in self.points:
            if p.count == count:
                return p
        raise KeyError(count)


def efficiency_sweep(donor: DonorSnapshot, pool: Sequence[WindowedScenario], val_set: Sequence[WindowedScenario],
                     eval_set: Sequence[WindowedScenario], counts: Sequence[int], seeds: Sequence[int],
                     scratch_config: TrainConfig, finetune_config: TrainConfig | None = None,
                     policy: BlockPolicy | str = "FTR", model_config: ModelConfig | None = None,
                     workers: int = 1) -> EfficiencyCurve:
    """Scratch vs fine-tuned MAPE as the number of real training scenarios grows.

    For each count and seed, ``count`` scenarios are drawn from ``pool`` with
    that seed; the same subset trains both models. ``val_set`` drives early
    stopping and ``eval_set`` (disjoint from the pool) gives the score.
    Cells are independent, so ``workers > 1`` runs them in separate processes
    with identical results.
    """
    counts = sorted(set(int(c) for c in counts))
    if not counts or counts[0] < 1:
        raise MetricError("counts must be positive")
    if counts[-1] > len(pool):
        raise MetricError(f"count {counts[-1]} exceeds the pool of {len(pool)} scenarios")
    if not seeds:
        raise MetricError("need at least one seed")
    pool_ids = {w.scenario_id for w in pool}
    if pool_ids & {w.scenario_id for w in eval_set}:
        raise MetricError("evaluation split overlaps the training pool")
    policy = BlockPolicy.from_code(policy) if isinstance(policy, str) else policy
    ft_cfg = finetune_config or TrainConfig(lr=donor.train_lr / 10, max_epochs=scratch_config.max_epochs,
                                            patience=scratch_config.patience,
                                            batch_size=scratch_config.batch_size)
    mcfg = model_config or donor.config
    cells = [(donor, pool, val_set, eval_set, n, int(seed), scratch_config, ft_cfg, policy, mcfg)
             for n in counts for seed in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_sweep_cell, cells))
    else:
        results = [_sweep_cell(c) for c in cells]
    points = []
    for i, n in enumerate(counts):
        cell = results[i * len(seeds):(i + 1) * len(seeds)]
        sc = [r[0] for r in cell]
        ft = [r[1] for r in cell]
        points.append(EfficiencyPoint(n, float(np.mean(sc)), float(np.mean(ft)), len(seeds), sc, ft))
    warnings = []
    for a, b in zip(points, points[1:]):
        if b.scratch_mape > a.scratch_mape:
            warnings.append(f"scratch MAPE rose from n={a.count} ({a.scratch_mape:.2f}%) "
                            f"to n={b.count} ({b.scratch_mape:.2f}%)")
    for w in warnings:
        log.warning(w)
    return EfficiencyCurve(points, policy.code, warnings)


def _sweep_cell(args) -> tuple[float, float]:
    donor, pool, val_set, eval_set, n, seed, scratch_cfg, ft_cfg, policy, mcfg = args
    rng = np.random.default_rng([seed, n])
    subset = [pool[i] for i in sorted(rng.choice(len(pool), size=n, replace=False))]
    scratch = RouteNetModel(mcfg, seed=seed + 1000)
    train(scratch, subset, val_set, _with_seed(scratch_cfg, seed))
    receiver = apply_policy(donor, policy, seed=seed + 2000)
    finetune(receiver, subset, val_set, Manual(policy), _with_seed(ft_cfg, seed), donor)
    sc, ft = evaluate(scratch, eval_set).mape, evaluate(receiver, eval_set).mape
    log.info("n=%d seed=%d scratch %.2f%% finetuned %.2f%%", n, seed, sc, ft)
    return sc, ft


def _with_seed(cfg: TrainConfig, seed: int) -> TrainConfig:
    return TrainConfig(lr=cfg.lr, max_epochs=cfg.max_epochs, patience=cfg.patience,
                       batch_size=cfg.batch_size, seed=int(seed))
