"""``netxfer`` command line: generate, train, transfer, eval, sweep, gradcheck.

Every subcommand reads one JSON experiment config, writes its artifacts under
the configured output directory and appends a record to ``manifest.ndjson``
there. Exit codes: 0 ok, 2 bad config, 3 missing or bad data, 4 numeric
failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .dataio import DatasetPartition, build_dataset, read_dataset, split, write_dataset
from .evalx import efficiency_sweep, evaluate, write_metrics_csv
from .ndiff import NumericError, finite_difference_check, masked_mape
from .netsim import (
    ConfigurationError, Flow, Ideal, Link, PacketSize, Perturbed, Poisson, Queue, Scenario,
    ScenarioGenerationError, ScenarioTemplate, Topology, gen_scenarios, save_scenario,
)
from .rnmodel import ModelConfig, ModelConfigError, RouteNetModel, TrainConfig, collate, train
from .transfer import (
    DonorSnapshot, InvalidPolicy, MethodError, enumerate_valid_policies, finetune, finetune_lr, method_from_spec,
    prepare_receiver,
)

log = logging.getLogger("netxfer")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
ENV_OUTPUT = "NETXFER_OUTPUT_DIR"
ENV_THREADS = "NETXFER_THREADS"


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


class GradCheckFailed(Exception):
    pass


# ---------------------------------------------------------------- config

_range = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_fidelity = {
    "type": "object", "additionalProperties": False, "required": ["kind"],
    "properties": {
        "kind": {"enum": ["ideal", "perturbed"]},
        "processing_delay": {"type": "number", "minimum": 0},
        "derating": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "jitter_sd": {"type": "number", "minimum": 0},
    },
}
_template = {
    "type": "object", "additionalProperties": False,
    "properties": {
        "nodes": _range, "extra_edge_prob": {"type": "number", "minimum": 0, "maximum": 1},
        "capacities_mbps": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "prop_delay": _range, "buffer_size": {"type": "integer", "minimum": 1}, "flows": _range,
        "traffic": {"enum": ["poisson", "onoff", "heavytail", "mixed"]},
        "packet_size": _range, "packet_size_kind": {"enum": ["fixed", "exponential"]},
        "max_utilization": _range, "utilization_cap": {"type": "number"},
        "onoff_on_mean": _range, "onoff_off_mean": _range, "heavytail_sigma": {"type": "number"},
        "duration": _range, "fidelity": _fidelity, "topology_seed": {"type": ["integer", "null"]},
    },
}
_dataset = {
    "type": "object", "additionalProperties": False, "required": ["count", "split"],
    "properties": {
        "template": _template,
        "count": {"type": "integer", "minimum": 1},
        "split": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 3, "maxItems": 3},
        "seed": {"type": "integer"},
        "write_traces": {"type": "boolean"},
    },
}
_train = {
    "type": "object", "additionalProperties": False,
    "properties": {
        "lr": {"type": "number", "exclusiveMinimum": 0}, "max_epochs": {"type": "integer", "minimum": 0},
        "patience": {"type": "integer", "minimum": 1}, "batch_size": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer"},
    },
}
_policy = {"type": "string", "pattern": "^[FTRftr]{3}$"}
CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object", "additionalProperties": False, "required": ["datasets"],
    "properties": {
        "output_dir": {"type": "string"},
        "seed": {"type": "integer"},
        "window_length": {"type": "number", "exclusiveMinimum": 0},
        "datasets": {
            "type": "object", "additionalProperties": False, "required": ["simulated", "real"],
            "properties": {"simulated": _dataset, "real": _dataset},
        },
        "model": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "embedding_dim": {"type": "integer", "minimum": 1},
                "mpa_iterations": {"type": "integer", "minimum": 1},
                "encoder_hidden": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "readout_hidden": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "inter_window": {"type": "boolean"},
                "seed": {"type": "integer"},
            },
        },
        "train": _train,
        "transfer": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "method": {"type": "string"},
                "train": _train,
                "receiver_seed": {"type": "integer"},
                "autofreeze": {"type": "object", "additionalProperties": False, "properties": {
                    "threshold": {"type": "number", "minimum": 0}, "patience": {"type": "integer", "minimum": 1}}},
                "l2sp": {"type": "object", "additionalProperties": False, "properties": {
                    "alpha": {"type": "number", "minimum": 0}, "beta": {"type": "number", "minimum": 0},
                    "policy": _policy}},
                "gtot": {"type": "object", "additionalProperties": False, "properties": {
                    "weight": {"type": "number", "minimum": 0}, "epsilon": {"type": "number", "exclusiveMinimum": 0},
                    "iterations": {"type": "integer", "minimum": 1}, "policy": _policy}},
            },
        },
        "sweep": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "counts": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                "seeds": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
                "policy": _policy,
            },
        },
    },
}


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: not valid JSON ({err})") from None
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as err:
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {where}: {err.message}") from None
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def output_dir(cfg: dict) -> Path:
    return Path(os.environ.get(ENV_OUTPUT) or cfg.get("output_dir") or "netxfer-out")


def _fidelity(d: dict | None):
    if not d or d["kind"] == "ideal":
        return Ideal()
    return Perturbed(**{k: v for k, v in d.items() if k != "kind"})


def make_template(d: dict | None) -> ScenarioTemplate:
    d = dict(d or {})
    fid = _fidelity(d.pop("fidelity", None))
    d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
    t = ScenarioTemplate(**d, fidelity=fid)
    t.validate()
    return t


def make_model_config(cfg: dict) -> ModelConfig:
    d = dict(cfg.get("model", {}))
    for k in ("encoder_hidden", "readout_hidden"):
        if k in d:
            d[k] = tuple(d[k])
    d["window_length"] = cfg.get("window_length", 0.1)
    return ModelConfig(**d)


def make_train_config(d: dict | None, default_lr: float | None = None) -> TrainConfig:
    d = dict(d or {})
    if "lr" not in d and default_lr is not None:
        d["lr"] = default_lr
    return TrainConfig(**d)


# ---------------------------------------------------------------- artifacts


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _hash_tree(paths, root: Path) -> dict:
    out = {}
    for p in paths:
        p = Path(p)
        files = sorted(p.rglob("*")) if p.is_dir() else [p]
        for f in files:
            if f.is_file():
                try:
                    key = str(f.resolve().relative_to(root.resolve()))
                except ValueError:
                    key = str(f)
                out[key] = sha256_file(f)
    return out


def append_manifest(out: Path, command: str, cfg: dict, inputs, outputs, seeds: dict, metrics: dict,
                    started: float) -> None:
    record = {
        "command": command,
        "version": __version__,
        "config_hash": config_hash(cfg),
        "inputs": _hash_tree(inputs, out),
        "outputs": _hash_tree(outputs, out),
        "seeds": seeds,
        "metrics": metrics,
        "wall_time": round(time.time() - started, 3),
    }
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "manifest.ndjson", "a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def _dump_json(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _split_ids(dcfg: dict, ids: list[int], seed: int) -> DatasetPartition:
    parts = dcfg["split"]
    if all(float(x).is_integer() for x in parts) and sum(parts) > 1:
        counts = [int(x) for x in parts]
        if sum(counts) != len(ids):
            raise ConfigError(f"split counts {counts} do not add up to count {len(ids)}")
        return split(ids, counts=counts, seed=seed)
    try:
        return split(ids, fractions=parts, seed=seed)
    except ValueError as err:
        raise ConfigError(str(err)) from None


def load_split(out: Path, name: str, part: str) -> list:
    root = out / "data" / name
    pfile = root / "partition.json"
    if not pfile.exists():
        raise DataError(f"dataset {name!r} not found under {out}; run `netxfer generate` first")
    partition = DatasetPartition.from_dict(json.loads(pfile.read_text()))
    wanted = getattr(partition, part)
    by_id = {w.scenario_id: w for w in read_dataset(root / "windows")}
    missing = [i for i in wanted if i not in by_id]
    if missing:
        raise DataError(f"dataset {name!r} is missing scenarios {missing[:5]}")
    return [by_id[i] for i in wanted]


# ---------------------------------------------------------------- commands


def cmd_generate(cfg: dict, args) -> dict:
    out = output_dir(cfg)
    data = out / "data"
    if data.exists() and not args.force:
        raise DataError(f"{data} already exists; pass --force to overwrite")
    seed = cfg.get("seed", 0)
    wl = cfg.get("window_length", 0.1)
    metrics = {}
    for k, (name, dcfg) in enumerate(sorted(cfg["datasets"].items())):
        template = make_template(dcfg.get("template"))
        scen = gen_scenarios(template, dcfg["count"], seed=dcfg.get("seed", seed * 1000 + k))
        root = data / name
        if root.exists():
            for f in sorted(root.rglob("*"), reverse=True):
                f.unlink() if f.is_file() else f.rmdir()
        (root / "scenarios").mkdir(parents=True)
        for s in scen:
            save_scenario(s, root / "scenarios" / f"scenario_{s.id:05d}.json")
        windows = build_dataset(scen, wl)
        write_dataset(root / "windows", windows)
        if dcfg.get("write_traces"):
            from .netsim import simulate
            (root / "traces").mkdir(parents=True, exist_ok=True)
            for s in scen:
                simulate(s).save_npz(root / "traces" / f"scenario_{s.id:05d}.npz")
        partition = _split_ids(dcfg, [w.scenario_id for w in windows], seed)
        _dump_json(partition.to_dict(), root / "partition.json")
        metrics[name] = {"scenarios": len(windows),
                         "active_samples": int(sum(int(w.active.sum()) for w in windows))}
        log.info("generated %s: %d scenarios", name, len(windows))
    return {"outputs": [data], "metrics": metrics, "seeds": {"seed": seed}}


def cmd_train(cfg: dict, args) -> dict:
    out = output_dir(cfg)
    tr = load_split(out, args.dataset, "training")
    va = load_split(out, args.dataset, "validation")
    tcfg = make_train_config(cfg.get("train"))
    model = RouteNetModel(make_model_config(cfg))
    res = train(model, tr, va, tcfg)
    name = args.name or ("donor" if args.dataset == "simulated" else f"scratch_{args.dataset}")
    ckpt = out / "models" / f"{name}.json"
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    model.save(ckpt, {"train": vars(tcfg), "dataset": args.dataset})
    res.write_history_csv(out / "models" / f"{name}_history.csv")
    return {"inputs": [out / "data" / args.dataset], "outputs": [ckpt, out / "models" / f"{name}_history.csv"],
            "metrics": {"best_epoch": res.best_epoch, "best_val_mape": 100 * res.best_val_loss},
            "seeds": {"train": tcfg.seed, "model": model.config.seed}}


def _load_checkpoint(path: Path) -> tuple[RouteNetModel, float]:
    if not path.exists():
        raise DataError(f"checkpoint {path} not found; run `netxfer train` first")
    try:
        model = RouteNetModel.load(path)
    except (ValueError, KeyError) as err:
        raise DataError(f"unreadable checkpoint {path}: {err}") from None
    doc = json.loads(path.read_text())
    lr = doc["hyperparameters"].get("train", {}).get("lr", 1e-3)
    return model, lr


def parse_method(cfg: dict, spec: str | None, policy: str | None):
    tcfg = cfg.get("transfer", {})
    spec = spec or tcfg.get("method", "manual:FTR")
    kind = spec.partition(":")[0].lower()
    if kind == "manual":
        code = spec.partition(":")[2] or policy
        if policy and spec.partition(":")[2] and policy.upper() != code.upper():
            raise ConfigError(f"--policy {policy} contradicts --method {spec}")
        return method_from_spec(f"manual:{code}" if code else "manual")
    params = dict(tcfg.get(kind, {}))
    if policy:
        params["policy"] = policy
    return method_from_spec(kind, **params)


def finetune_train_config(cfg: dict, donor_lr: float) -> TrainConfig:
    """``transfer.train`` if present, else ``train``; lr defaults to donor lr / 10."""
    tcfg = cfg.get("transfer", {})
    d = dict(tcfg["train"]) if "train" in tcfg else {k: v for k, v in cfg.get("train", {}).items() if k != "lr"}
    return make_train_config(d, finetune_lr(donor_lr))


def cmd_transfer(cfg: dict, args) -> dict:
    out = output_dir(cfg)
    method = parse_method(cfg, args.method, args.policy)
    donor_path = Path(args.donor) if args.donor else out / "models" / "donor.json"
    donor_model, donor_lr = _load_checkpoint(donor_path)
    donor = DonorSnapshot.from_model(donor_model, donor_lr)
    tr = load_split(out, args.dataset, "training")
    va = load_split(out, args.dataset, "validation")
    tcfg = cfg.get("transfer", {})
    train_cfg = finetune_train_config(cfg, donor_lr)
    receiver = prepare_receiver(donor, method, seed=tcfg.get("receiver_seed", 1))
    res = finetune(receiver, tr, va, method, train_cfg, donor)
    tag = f"{method.name}_{method.policy.code}" if method.name in ("manual", "l2sp", "gtot") else method.name
    name = args.name or f"transfer_{tag}"
    ckpt = out / "models" / f"{name}.json"
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    receiver.save(ckpt, {"train": vars(train_cfg), "method": method.name, "policy": method.policy.code,
                         "freeze_events": res.freeze_events, "donor_sha256": sha256_file(donor_path)})
    hist = out / "models" / f"{name}_history.csv"
    res.train.write_history_csv(hist)
    return {"inputs": [donor_path, out / "data" / args.dataset], "outputs": [ckpt, hist],
            "metrics": {"method": method.name, "policy": method.policy.code, "best_epoch": res.train.best_epoch,
                        "best_val_mape": 100 * res.train.best_val_loss, "freeze_events": res.freeze_events},
            "seeds": {"train": train_cfg.seed}}


def cmd_eval(cfg: dict, args) -> dict:
    out = output_dir(cfg)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "models" / "donor.json"
    model, _ = _load_checkpoint(ckpt)
    data = load_split(out, args.dataset, args.split)
    if not data:
        raise DataError(f"split {args.split!r} of {args.dataset!r} is empty")
    report = evaluate(model, data)
    stem = f"eval_{ckpt.stem}_{args.dataset}_{args.split}"
    rdir = out / "reports"
    rdir.mkdir(parents=True, exist_ok=True)
    summary = report.summary()
    row = {"checkpoint": ckpt.stem, "dataset": args.dataset, "split": args.split, **summary}
    if args.baseline:
        base, _ = _load_checkpoint(Path(args.baseline))
        row["baseline_mape"] = evaluate(base, data).mape
        row["normalized_mape"] = summary["mape"] / row["baseline_mape"]
    write_metrics_csv([row], rdir / f"{stem}.csv")
    report.write_ndjson(rdir / f"{stem}.ndjson")
    pdf = report.pdf(bins=args.bins)
    write_metrics_csv([{"bin_lo": float(a), "bin_hi": float(b), "density": float(d)}
                       for a, b, d in zip(pdf.edges[:-1], pdf.edges[1:], pdf.density)], rdir / f"{stem}_pdf.csv")
    print(f"MAPE {summary['mape']:.3f}% over {summary['samples']} flow-windows "
          f"(mean signed error {100 * summary['mean_signed_error']:+.2f}%)")
    return {"inputs": [ckpt, out / "data" / args.dataset],
            "outputs": [rdir / f"{stem}.csv", rdir / f"{stem}.ndjson", rdir / f"{stem}_pdf.csv"],
            "metrics": row, "seeds": {}}


def cmd_sweep(cfg: dict, args) -> dict:
    out = output_dir(cfg)
    scfg = cfg.get("sweep", {})
    counts = [int(c) for c in args.counts.split(",")] if args.counts else scfg.get("counts", [5, 10])
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else scfg.get("seeds", [0, 1, 2])
    policy = args.policy or scfg.get("policy", "FTR")
    donor_path = Path(args.donor) if args.donor else out / "models" / "donor.json"
    donor_model, donor_lr = _load_checkpoint(donor_path)
    donor = DonorSnapshot.from_model(donor_model, donor_lr)
    pool = load_split(out, args.dataset, "training")
    va = load_split(out, args.dataset, "validation")
    ev = load_split(out, args.dataset, "evaluation")
    if not ev:
        raise DataError(f"evaluation split of {args.dataset!r} is empty")
    if max(counts) > len(pool):
        raise ConfigError(f"count {max(counts)} exceeds the {len(pool)} training scenarios available")
    scratch_cfg = make_train_config(cfg.get("train"))
    ft_cfg = finetune_train_config(cfg, donor_lr)
    curve = efficiency_sweep(donor, pool, va, ev, counts, seeds, scratch_cfg, ft_cfg, policy,
                             make_model_config(cfg), workers=args.threads or 1)
    rdir = out / "reports"
    rdir.mkdir(parents=True, exist_ok=True)
    curve.write_csv(rdir / "sweep.csv")
    for r in curve.rows():
        print(f"n={r['count']:>4}  scratch {r['scratch_mape']:7.3f}%  finetuned {r['finetuned_mape']:7.3f}%  "
              f"advantage {100 * r['advantage']:+.1f}%")
    return {"inputs": [donor_path, out / "data" / args.dataset], "outputs": [rdir / "sweep.csv"],
            "metrics": {"points": curve.rows(), "warnings": curve.warnings}, "seeds": {"seeds": seeds}}


# ---------------------------------------------------------------- gradcheck


def tiny_scenario() -> Scenario:
    """Two flows sharing one link over a 3-node line; 0.2 s gives two windows."""
    links = [Link(0, 0, 1, 1e6, 1e-4), Link(1, 1, 2, 2e6, 2e-4)]
    topo = Topology([0, 1, 2], links, [Queue(0, 0, 100), Queue(1, 1, 200)])
    size = PacketSize("fixed", 1000.0)
    flows = [Flow(0, (0, 1), Poisson(60.0, size)), Flow(1, (1,), Poisson(90.0, size))]
    return Scenario(0, topo, flows, 0.2, 7)


def gradcheck_problem(seed: int = 0):
    """Tiny model and loss closure for the end-to-end finite-difference check."""
    ws = build_dataset([tiny_scenario()], 0.1)
    from .dataio import Normalizer
    norm = Normalizer.fit(ws)
    model = RouteNetModel(ModelConfig(embedding_dim=4, mpa_iterations=2, encoder_hidden=(4,),
                                      readout_hidden=(4,), seed=seed), norm)
    batch = collate(ws, norm)
    # zero biases would put every ReLU exactly on its kink
    rng = np.random.default_rng(seed)
    for p in model.store:
        if p.value.ndim == 1:
            p.value += rng.normal(0.0, 0.1, p.value.shape)

    def loss():
        return masked_mape(model.forward(batch).prediction, batch.target, batch.active)

    return model, batch, loss


def run_gradcheck(tol: float = 1e-4, analytic=None):
    model, _, loss = gradcheck_problem()
    return finite_difference_check(loss, model.store.trainable(), tol=tol, analytic=analytic)


def cmd_gradcheck(cfg: dict | None, args) -> dict:
    rep = run_gradcheck(args.tol)
    worst = max(rep.entries, key=lambda e: e.error)
    status = "PASS" if rep.passed else "FAIL"
    print(f"gradcheck {status}: {len(rep.entries)} entries, max error {rep.max_error:.2e} "
          f"(tolerance {args.tol:g}, worst {worst.name}{list(worst.index)})")
    if not rep.passed:
        raise GradCheckFailed(f"{len(rep.failures())} gradient entries exceed tolerance {args.tol:g}")
    return {"metrics": {"entries": len(rep.entries), "max_error": rep.max_error}, "seeds": {}}


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="netxfer", description="Sim-to-real transfer for network delay models.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--threads", type=int, default=None, help=f"worker/BLAS thread cap (env {ENV_THREADS})")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", "-c", required=True, help="experiment config (JSON)")
        return sp

    g = with_config(sub.add_parser("generate", help="simulate scenarios and write windowed datasets"))
    g.add_argument("--force", action="store_true", help="overwrite existing data")

    t = with_config(sub.add_parser("train", help="train a model from scratch"))
    t.add_argument("--dataset", default="simulated", choices=["simulated", "real"])
    t.add_argument("--name", help="checkpoint name (default donor / scratch_<dataset>)")

    codes = ", ".join(pol.code for pol in enumerate_valid_policies())
    x = with_config(sub.add_parser("transfer", help="fine-tune the donor on real data"))
    x.add_argument("--method", help="manual:XYZ | autofreeze | l2sp | gtot")
    x.add_argument("--policy", help=f"block policy code, one of {codes}")
    x.add_argument("--donor", help="donor checkpoint (default models/donor.json)")
    x.add_argument("--dataset", default="real", choices=["simulated", "real"])
    x.add_argument("--name")

    e = with_config(sub.add_parser("eval", help="evaluate a checkpoint"))
    e.add_argument("--checkpoint", help="model checkpoint (default models/donor.json)")
    e.add_argument("--dataset", default="real", choices=["simulated", "real"])
    e.add_argument("--split", default="evaluation", choices=["training", "validation", "evaluation"])
    e.add_argument("--baseline", help="checkpoint whose MAPE normalizes the result")
    e.add_argument("--bins", type=int, default=50)

    s = with_config(sub.add_parser("sweep", help="data-efficiency sweep: scratch vs fine-tuned"))
    s.add_argument("--counts", help="comma-separated training set sizes")
    s.add_argument("--seeds", help="comma-separated seeds")
    s.add_argument("--policy", help="manual policy for the fine-tuned arm (default FTR)")
    s.add_argument("--donor")
    s.add_argument("--dataset", default="real", choices=["simulated", "real"])

    gc = sub.add_parser("gradcheck", help="finite-difference check of the model gradients")
    gc.add_argument("--tol", type=float, default=1e-4)
    return p


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "transfer": cmd_transfer, "eval": cmd_eval,
            "sweep": cmd_sweep, "gradcheck": cmd_gradcheck}

CONFIG_ERRORS = (ConfigError, InvalidPolicy, MethodError, ModelConfigError, ScenarioGenerationError,
                 ConfigurationError)
DATA_ERRORS = (DataError, FileNotFoundError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    if args.threads is None and os.environ.get(ENV_THREADS):
        args.threads = int(os.environ[ENV_THREADS])
    started = time.time()
    try:
        cfg = load_config(args.config) if getattr(args, "config", None) else None
        with threadpool_limits(limits=args.threads or 1):
            result = COMMANDS[args.command](cfg, args)
    except CONFIG_ERRORS as err:
        print(f"netxfer: config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except DATA_ERRORS as err:
        print(f"netxfer: data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, GradCheckFailed) as err:
        print(f"netxfer: numeric error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    if cfg is not None:
        append_manifest(output_dir(cfg), args.command, cfg, result.get("inputs", []), result.get("outputs", []),
                        result.get("seeds", {}), _jsonable(result.get("metrics", {})), started)
    return EXIT_OK


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


if __name__ == "__main__":
    sys.exit(main())
