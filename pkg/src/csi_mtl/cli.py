"""Command-line entry point.

Subcommands: generate (synthesize dataset files), train (run one regime from
a JSON run config), eval (targeted queries over trained runs), report (full
comparison report). Global flags --config/--seed/--out/--quiet; flags win
over config-file values. CSI_MTL_HOME sets the default output root.

Exit codes: 0 success, 2 configuration, 3 I/O or corrupt data, 4 shape or
compatibility mismatch, 5 missing artifact.
"""

import argparse
import datetime
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from .channel_data import (
    DEFAULT_DIMS,
    ScenarioConfig,
    check_dims,
    denormalize,
    generate_split_datasets,
    load_dataset,
    save_dataset,
)
from .errors import (
    CheckpointIncompatibleError,
    ConfigError,
    CorruptHeaderError,
    CsiMtlError,
    DataError,
    DimensionMismatchError,
    InvalidArgumentError,
    MissingArtifactError,
    ShapeMismatchError,
    TruncatedPayloadError,
)
from .evaluation import (
    DEFAULT_SNR_GRID,
    RegimeArtifacts,
    compare_regimes,
    cross_pair_matrix,
)
from .models import load_checkpoint, restore_models, save_checkpoint
from .training import (
    LossTrace,
    TaskSpec,
    TrainConfig,
    distribution_label,
    train_hard_sharing,
    train_independent,
    train_joint,
)

REGIMES = ("independent", "joint", "hard_sharing")


def default_out_root():
    return os.environ.get("CSI_MTL_HOME", os.path.join(os.getcwd(), "csi_mtl_runs"))


@dataclass
class RunConfig:
    tasks: list
    regime: str
    train: TrainConfig
    dims: tuple = DEFAULT_DIMS
    out_dir: str = ""
    extras: dict = field(default_factory=dict)

    @property
    def distribution_label(self):
        return distribution_label(self.tasks)

    @classmethod
    def load(cls, path, seed=None, out=None, epochs=None, regime=None):
        try:
            with open(path, "r", encoding="utf-8") as f:
                raw = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: not valid JSON: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: run config must be a JSON object")
        base = os.path.dirname(os.path.abspath(path))

        train_raw = dict(raw.get("train", {}))
        if seed is not None:
            train_raw["seed"] = seed
        if epochs is not None:
            train_raw["epochs"] = epochs
        try:
            train_cfg = TrainConfig(**train_raw)
        except TypeError as e:
            raise ConfigError(f"{path}: bad train section: {e}") from e

        dims = check_dims(tuple(raw.get("dims", DEFAULT_DIMS)))
        tasks_raw = raw.get("tasks", [])
        if not tasks_raw:
            raise ConfigError(f"{path}: no tasks defined")
        tasks = []
        for i, t in enumerate(tasks_raw):
            try:
                scenario = t["scenario"]
                if isinstance(scenario, str):
                    scenario = ScenarioConfig.preset(scenario, seed=train_cfg.seed)
                else:
                    scenario = ScenarioConfig.from_dict(scenario)
                paths = {}
                for split in ("train", "val", "test"):
                    p = t.get(split)
                    if p is not None and not os.path.isabs(p):
                        p = os.path.join(base, p)
                    paths[split] = p
                tasks.append(TaskSpec(scenario, t["encoder_family"], t["compression_ratio"], **paths))
            except KeyError as e:
                raise ConfigError(f"{path}: task {i} is missing field {e}") from e

        chosen = regime or raw.get("regime", "independent")
        if chosen not in REGIMES:
            raise ConfigError(f"regime must be one of {REGIMES}, got {chosen!r}")
        out_dir = out or raw.get("out") or default_out_root()
        if not os.path.isabs(out_dir):
            out_dir = os.path.join(base if raw.get("out") and not out else os.getcwd(), out_dir)
        return cls(tasks, chosen, train_cfg, dims, out_dir, raw.get("extras", {}))


def _say(args, msg):
    if not getattr(args, "quiet", False):
        print(msg)


def _active_fraction(ds):
    """Mean fraction of entries whose magnitude exceeds 1% of the sample max."""
    raw = np.abs(denormalize(ds.tensors, ds.norm_offset, ds.norm_scale))
    peaks = raw.max(axis=(1, 2), keepdims=True)
    return float((raw > 0.01 * peaks).mean())


def cmd_generate(args):
    if args.samples < 1:
        raise InvalidArgumentError(f"--samples must be >= 1, got {args.samples}")
    dims = check_dims(tuple(int(x) for x in args.dims.split(",")))
    if os.path.isfile(args.scenario):
        with open(args.scenario, "r", encoding="utf-8") as f:
            scenario = ScenarioConfig.from_dict(json.load(f))
        if args.seed is not None:
            scenario = ScenarioConfig.from_dict({**scenario.to_dict(), "seed": args.seed})
    else:
        scenario = ScenarioConfig.preset(args.scenario, seed=args.seed if args.seed is not None else 0)
    counts = {"train": args.samples,
              "val": args.val if args.val else max(1, args.samples // 10),
              "test": args.test if args.test else max(1, args.samples // 10)}
    out = args.out or default_out_root()
    os.makedirs(out, exist_ok=True)
    sets = generate_split_datasets(scenario, counts, dims)
    for split in ("train", "val", "test"):
        ds = sets[split]
        path = os.path.join(out, f"{scenario.name}_{split}.ds")
        save_dataset(ds, path)
        _say(args, f"wrote {path}: {len(ds)} samples, active fraction {_active_fraction(ds):.4f}")
    return 0


def _regime_dir(rc):
    return os.path.join(rc.out_dir, rc.regime)


def _train_one(rc, args):
    run_dir = _regime_dir(rc)
    os.makedirs(run_dir, exist_ok=True)

    if rc.regime == "independent":
        results = []
        for i, task in enumerate(rc.tasks):
            cfg_i = TrainConfig(**{**rc.train.__dict__, "seed": rc.train.seed + i})
            task_resume = None
            task_last = os.path.join(run_dir, f"task{i}_last.ckpt")
            if args.resume:
                if not os.path.exists(task_last):
                    raise MissingArtifactError(f"--resume given but {task_last} does not exist")
                task_resume = load_checkpoint(task_last)
            results.append(train_independent(task, cfg_i, resume=task_resume))
        _write_independent(rc, run_dir, results, args)
        return results
    trainer = train_joint if rc.regime == "joint" else train_hard_sharing
    if len(rc.tasks) < 2:
        raise ConfigError(f"{rc.regime} training requires at least 2 tasks, got {len(rc.tasks)}")
    last_path = os.path.join(run_dir, "checkpoint_last.ckpt")
    resume = None
    if args.resume:
        if not os.path.exists(last_path):
            raise MissingArtifactError(f"--resume given but {last_path} does not exist")
        resume = load_checkpoint(last_path)
    result = trainer(rc.tasks, rc.train, resume=resume)
    _write_run(rc, run_dir, result, args, trace_name="trace.jsonl",
               last_name="checkpoint_last.ckpt", best_name="checkpoint_best.ckpt")
    return [result]


def _append_trace(run_dir, trace_name, result, resumed):
    trace_path = os.path.join(run_dir, trace_name)
    result.trace.write_jsonl(trace_path, append=resumed and os.path.exists(trace_path))
    full = LossTrace.from_jsonl(trace_path)
    full.write_epoch_csv(os.path.join(run_dir, trace_name.replace(".jsonl", "_epochs.csv")))


def _write_run(rc, run_dir, result, args, trace_name, last_name, best_name):
    from .models import load_models_into

    save_checkpoint(os.path.join(run_dir, last_name), result.models, result.configs,
                    step=result.global_step, optimizer=result.optimizer, extra=result.resume_extra)
    load_models_into(result.models, result.best_arrays)
    save_checkpoint(os.path.join(run_dir, best_name), result.models, result.configs,
                    step=result.global_step,
                    extra={"best_epoch": result.best_epoch, "best_val": result.best_val})
    _append_trace(run_dir, trace_name, result, args.resume)


def _write_independent(rc, run_dir, results, args):
    for i, result in enumerate(results):
        _write_run(rc, run_dir, result, args, trace_name=f"task{i}_trace.jsonl",
                   last_name=f"task{i}_last.ckpt", best_name=f"task{i}_best.ckpt")


def cmd_train(args):
    if not args.config:
        raise ConfigError("train requires --config RUNCONFIG.json")
    rc = RunConfig.load(args.config, seed=args.seed, out=args.out,
                        epochs=args.epochs, regime=args.regime)
    results = _train_one(rc, args)
    manifest = {
        "regime": rc.regime,
        "seed": rc.train.seed,
        "distribution_label": rc.distribution_label,
        "tasks": [{"name": t.name, "scenario": t.scenario.name,
                   "encoder_family": t.encoder_family,
                   "compression_ratio": str(t.compression_ratio)} for t in rc.tasks],
        "train": {k: v for k, v in rc.train.__dict__.items()},
        "best_val_nmse_db": [r.best_val for r in results],
        "best_epoch": [r.best_epoch for r in results],
        "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    with open(os.path.join(_regime_dir(rc), "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, sort_keys=True, indent=2)
        f.write("\n")
    for r in results:
        _say(args, f"{rc.regime}: best epoch {r.best_epoch}, mean val NMSE {r.best_val:.2f} dB")
    return 0


def _load_regime(rc, regime):
    run_dir = os.path.join(rc.out_dir, regime)
    if regime == "independent":
        models, configs = {}, {}
        i = 0
        while os.path.exists(os.path.join(run_dir, f"task{i}_best.ckpt")):
            manifest, arrays = load_checkpoint(os.path.join(run_dir, f"task{i}_best.ckpt"))
            pair, pair_cfgs = restore_models(manifest, arrays)
            models[f"enc{i}"], models[f"dec{i}"] = pair["enc"], pair["dec"]
            configs[f"enc{i}"], configs[f"dec{i}"] = pair_cfgs["enc"], pair_cfgs["dec"]
            i += 1
        if not models:
            return None
        if i != len(rc.tasks):
            raise MissingArtifactError(f"{run_dir}: found {i} trained pairs for {len(rc.tasks)} tasks")
        return RegimeArtifacts(regime, models, configs)
    path = os.path.join(run_dir, "checkpoint_best.ckpt")
    if not os.path.exists(path):
        return None
    manifest, arrays = load_checkpoint(path)
    models, configs = restore_models(manifest, arrays)
    return RegimeArtifacts(regime, models, configs)


def _parse_snr(text):
    if ":" in text:
        start, stop, step = (float(x) for x in text.split(":"))
        grid = list(np.arange(start, stop + 0.5 * step, step))
        return [float(g) for g in grid]
    return [float(x) for x in text.split(",")]


def _artifacts(rc, required=None):
    arts = {}
    for regime in REGIMES:
        arts[regime] = _load_regime(rc, regime)
    if required:
        missing = [r for r in required if arts.get(r) is None]
        if missing:
            raise MissingArtifactError(f"no trained checkpoints for regime(s) {missing} under {rc.out_dir}")
    return arts


def cmd_eval(args):
    if not args.config:
        raise ConfigError("eval requires --config RUNCONFIG.json")
    rc = RunConfig.load(args.config, seed=args.seed, out=args.out)
    want_all = not (args.matrix or args.se or args.params)
    report_dir = os.path.join(rc.out_dir, "report")
    os.makedirs(report_dir, exist_ok=True)
    snr_grid = _parse_snr(args.snr) if args.snr else list(DEFAULT_SNR_GRID)

    if args.matrix or want_all:
        arts = _artifacts(rc, required=["independent"] if args.matrix else None)
        art = arts["independent"]
        if art is not None:
            labels = [t.name for t in rc.tasks]
            tests = [t.dataset("test") for t in rc.tasks]
            encoders = [(labels[i], art.encoder(i)) for i in range(len(rc.tasks))]
            decoders = [(labels[i], art.models[f"dec{i}"]) for i in range(len(rc.tasks))]
            matrix = cross_pair_matrix(encoders, decoders, tests)
            matrix.write_csv(os.path.join(report_dir, "cross_pairs_independent.csv"))
            _say(args, f"cross-pair matrix over {labels}: diag "
                       + ", ".join(f"{matrix.entries[i, i]:.2f}" for i in range(len(labels))))
    if args.se or args.params or want_all:
        arts = _artifacts(rc)
        available = {k: v for k, v in arts.items() if v is not None}
        if not available:
            raise MissingArtifactError(f"no trained regimes under {rc.out_dir}")
        report = compare_regimes(rc.tasks, arts, snr_grid=snr_grid, se_samples=args.se_samples)
        report.write(report_dir)
        _say(args, f"report written to {report_dir} (regimes: {sorted(available)}; gaps: {report.gaps})")
    return 0


def cmd_report(args):
    if not args.config:
        raise ConfigError("report requires --config RUNCONFIG.json")
    rc = RunConfig.load(args.config, seed=args.seed, out=args.out)
    arts = _artifacts(rc)
    if all(v is None for v in arts.values()):
        raise MissingArtifactError(f"no trained regimes under {rc.out_dir}")
    snr_grid = _parse_snr(args.snr) if args.snr else list(DEFAULT_SNR_GRID)
    report = compare_regimes(rc.tasks, arts, snr_grid=snr_grid, se_samples=args.se_samples)
    report_dir = os.path.join(rc.out_dir, "report")
    report.write(report_dir, make_plots=args.plots)
    _say(args, f"report written to {report_dir}; ordering (fewest parameters first): {report.ordering}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="csi-mtl",
                                description="Train and compare multi-task CSI feedback autoencoders.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration JSON")
    common.add_argument("--seed", type=int, default=None, help="override the run seed")
    common.add_argument("--out", default=None, help="output directory root")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="synthesize dataset files")
    g.add_argument("--scenario", required=True, help="preset name (indoor/outdoor) or scenario JSON path")
    g.add_argument("--samples", type=int, required=True, help="training sample count")
    g.add_argument("--val", type=int, default=0, help="validation count (default samples/10)")
    g.add_argument("--test", type=int, default=0, help="test count (default samples/10)")
    g.add_argument("--dims", default=",".join(str(d) for d in DEFAULT_DIMS),
                   help="n_subcarriers,n_delay,n_tx")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", parents=[common], help="train one regime")
    t.add_argument("--regime", choices=REGIMES, default=None)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--resume", action="store_true", help="continue from the last checkpoint")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="evaluate trained runs")
    e.add_argument("--matrix", action="store_true", help="encoder/decoder cross-pair NMSE matrix")
    e.add_argument("--se", action="store_true", help="spectral-efficiency curves")
    e.add_argument("--params", action="store_true", help="parameter-count comparison")
    e.add_argument("--snr", default=None, help="grid as start:stop:step or comma list")
    e.add_argument("--se-samples", type=int, default=1000)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", parents=[common], help="full comparison report")
    r.add_argument("--snr", default=None)
    r.add_argument("--se-samples", type=int, default=1000)
    r.add_argument("--plots", action="store_true", help="also render PNG plots")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MissingArtifactError as e:
        print(f"error: {e}", file=sys.stderr)
        return 5
    except (DimensionMismatchError, ShapeMismatchError, CheckpointIncompatibleError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except (ConfigError, InvalidArgumentError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (CorruptHeaderError, TruncatedPayloadError, DataError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except CsiMtlError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
