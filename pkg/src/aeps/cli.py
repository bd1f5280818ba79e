"""Operator entry point.

Five subcommands cover the whole workflow: ``generate`` labels planned
missions into a training dataset, ``train`` fits a demand predictor,
``simulate`` flies one mission, ``benchmark`` reproduces the paired
normal-vs-enhanced comparison, and ``evaluate`` compares predictor backends
on a noise-injected test set.

Settings merge from an optional JSON config file (schema 1, unknown keys
rejected) with command line flags taking precedence.  ``AEPS_SEED`` serves as
a seed fallback; simulate and benchmark refuse to run unseeded.  Every output
file lands under the ``--out`` directory.  Exit codes: 0 success, 1 runtime
failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .plant import DEFAULT_SPECS, PlantSpecs, ULTRACAP
from .powermodel import DEMAND_PRESETS
from .predictor import (
    LabeledDataset,
    TrainConfig,
    generate_dataset,
    load_model,
    mae,
    save_model,
    split_dataset,
    train_predictor,
)
from .world import (
    MODES,
    MissionSettings,
    ScenarioConfig,
    generate_scenario,
    run_mission,
)

__all__ = ["main"]

CONFIG_SCHEMA = 1
COMPLEXITIES = ("low_dynamic", "high_dynamic")

# config keys each command accepts; must stay in sync with the flag names
KNOWN_KEYS = {
    "generate": {"out", "seed", "count", "preset"},
    "train": {"out", "seed", "dataset", "backend", "members", "alpha", "epochs", "batch_size"},
    "simulate": {"out", "seed", "mode", "scenario", "complexity", "model", "preset"},
    "benchmark": {"out", "seed", "runs", "model", "preset", "uc_capacity_j"},
    "evaluate": {"out", "seed", "dataset", "count", "members", "alpha", "epochs", "noise_w"},
}


class UsageError(Exception):
    """Bad flags, bad config file, or missing required inputs (exit 2)."""


def _load_config(path, command: str) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}")
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file is not valid JSON: {exc}")
    if not isinstance(doc, dict) or doc.get("schema") != CONFIG_SCHEMA:
        raise UsageError(f"config file must be a JSON object with schema {CONFIG_SCHEMA}")
    unknown = sorted(set(doc) - {"schema"} - KNOWN_KEYS[command])
    if unknown:
        raise UsageError(f"unknown config keys for {command}: {', '.join(unknown)}")
    return doc


def _pick(args, cfg: dict, key: str, default):
    """Flag wins over config file wins over built-in default."""
    flag = getattr(args, key)
    if flag is not None:
        return flag
    if key in cfg:
        return cfg[key]
    return default


def _resolve_seed(args, cfg: dict, required: bool) -> int:
    seed = _pick(args, cfg, "seed", None)
    if seed is not None:
        return int(seed)
    env = os.environ.get("AEPS_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"AEPS_SEED must be an integer, got {env!r}")
    if required:
        raise UsageError("a seed is required: pass --seed, set it in the config, or set AEPS_SEED")
    return 0


def _demand_preset(name):
    if name not in DEMAND_PRESETS:
        raise UsageError(f"unknown preset {name!r}; choose from {sorted(DEMAND_PRESETS)}")
    return DEMAND_PRESETS[name]


def _out_dir(args, cfg: dict) -> str:
    out = str(_pick(args, cfg, "out", "aeps_out"))
    os.makedirs(out, exist_ok=True)
    return out


def _write_json(path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _load_predictor(path):
    if not os.path.exists(path):
        raise UsageError(f"model file not found: {path}")
    try:
        return load_model(path)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot load model {path}: {exc}")


def _load_dataset(path) -> LabeledDataset:
    if not os.path.exists(path):
        raise UsageError(f"dataset file not found: {path}")
    try:
        return LabeledDataset.from_csv(path)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read dataset {path}: {exc}")


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    cfg = _load_config(args.config, "generate")
    count = int(_pick(args, cfg, "count", 1100))
    if count < 1:
        raise UsageError("--count must be >= 1")
    seed = _resolve_seed(args, cfg, required=False)
    demand = _demand_preset(_pick(args, cfg, "preset", "scaled"))
    out = _out_dir(args, cfg)

    dataset = generate_dataset(count, seed, demand=demand)
    path = os.path.join(out, "dataset.csv")
    dataset.to_csv(path)

    labels = dataset.labels
    print(f"wrote {path}")
    print(f"rows: {len(dataset)}")
    print(
        f"label_w: mean={np.mean(labels):.3f} std={np.std(labels):.3f} "
        f"min={np.min(labels):.3f} max={np.max(labels):.3f}"
    )
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args.config, "train")
    dataset_path = _pick(args, cfg, "dataset", None)
    if dataset_path is None:
        raise UsageError("--dataset is required")
    dataset = _load_dataset(dataset_path)

    seed = _resolve_seed(args, cfg, required=False)
    backend = str(_pick(args, cfg, "backend", "deterministic"))
    if backend not in ("deterministic", "ensemble"):
        raise UsageError(f"unknown backend {backend!r}")
    members = int(_pick(args, cfg, "members", 10))
    alpha = float(_pick(args, cfg, "alpha", 1e-3))
    epochs = int(_pick(args, cfg, "epochs", 500))
    batch_size = int(_pick(args, cfg, "batch_size", 1100))
    out = _out_dir(args, cfg)

    try:
        config = TrainConfig(seed=seed, learning_rate=alpha, batch_size=batch_size, epochs=epochs)
    except ValueError as exc:
        raise UsageError(str(exc))
    if alpha == 0.0:
        print("warning: learning rate 0, the saved model equals its initialization", file=sys.stderr)

    predictor, results = train_predictor(dataset, config, backend=backend, members=members)

    model_path = os.path.join(out, "model.json")
    save_model(predictor, model_path)
    curve_path = os.path.join(out, "loss_curve.csv")
    results[0].curve_to_csv(curve_path)

    _, val = split_dataset(dataset, config)
    val_mae = mae(predictor, val)
    label_mean = float(np.mean(dataset.labels))
    print(f"wrote {model_path} ({len(predictor.members)} member(s))")
    print(f"wrote {curve_path}")
    print(f"val MAE: {val_mae:.4f} W ({100.0 * val_mae / label_mean:.2f}% of mean label)")
    return 0


def _mission_settings(preset: str) -> MissionSettings:
    return MissionSettings(demand=_demand_preset(preset))


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config, "simulate")
    mode = _pick(args, cfg, "mode", None)
    if mode not in MODES:
        raise UsageError(f"--mode must be one of {MODES}")
    out = _out_dir(args, cfg)
    settings = _mission_settings(_pick(args, cfg, "preset", "scaled"))

    scenario_path = _pick(args, cfg, "scenario", None)
    if scenario_path is not None:
        if not os.path.exists(scenario_path):
            raise UsageError(f"scenario file not found: {scenario_path}")
        try:
            scenario = ScenarioConfig.from_json(scenario_path)
        except (ValueError, KeyError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot load scenario {scenario_path}: {exc}")
    else:
        seed = _resolve_seed(args, cfg, required=True)
        complexity = str(_pick(args, cfg, "complexity", "low_dynamic"))
        if complexity not in COMPLEXITIES:
            raise UsageError(f"--complexity must be one of {COMPLEXITIES}")
        scenario = generate_scenario(complexity=complexity, seed=seed)

    predictor = None
    model_path = _pick(args, cfg, "model", None)
    if mode == "agility_enhanced":
        if model_path is None:
            raise UsageError(
                "agility_enhanced mode needs a trained demand model: pass --model "
                "(train one with the train command)"
            )
        predictor = _load_predictor(model_path)
    elif model_path is not None:
        predictor = _load_predictor(model_path)

    trace = run_mission(scenario, mode, predictor=predictor, settings=settings)

    trace_path = os.path.join(out, f"trace_{mode}.csv")
    trace.to_csv(trace_path)
    summary_path = os.path.join(out, f"summary_{mode}.json")
    _write_json(summary_path, trace.summary())

    s = trace.summary()
    print(f"wrote {trace_path}")
    print(f"wrote {summary_path}")
    print(
        f"outcome: {s['outcome']}  duration: {s['duration_s']:.1f} s  "
        f"precharge: {s['precharge_s']:.1f} s  min distance: {s['min_distance_m']:.2f} m  "
        f"brownout steps: {s['brownout_steps']}"
    )
    return 0


def cmd_benchmark(args) -> int:
    from .metrics import compare, write_durations, write_fig7_power

    cfg = _load_config(args.config, "benchmark")
    base_seed = _resolve_seed(args, cfg, required=True)
    runs = int(_pick(args, cfg, "runs", 10))
    if runs < 1:
        raise UsageError("--runs must be >= 1")
    out = _out_dir(args, cfg)
    preset = _pick(args, cfg, "preset", "scaled")
    settings = _mission_settings(preset)

    predictor = None
    model_path = _pick(args, cfg, "model", None)
    if model_path is not None:
        predictor = _load_predictor(model_path)

    specs = DEFAULT_SPECS
    uc_capacity = _pick(args, cfg, "uc_capacity_j", None)
    if uc_capacity is not None:
        uc_capacity = float(uc_capacity)
        if uc_capacity < 0:
            raise UsageError("--uc-capacity-j must be >= 0")
        specs = PlantSpecs(ultracap=dataclasses.replace(ULTRACAP, energy_capacity=uc_capacity))

    seeds = [base_seed + k for k in range(runs)]
    traces = {mode: [] for mode in MODES}
    for complexity in COMPLEXITIES:
        for seed in seeds:
            scenario = generate_scenario(complexity=complexity, seed=seed)
            for mode in MODES:
                trace = run_mission(scenario, mode, predictor=predictor, specs=specs, settings=settings)
                trace.to_csv(os.path.join(out, f"trace_{complexity}_{seed}_{mode}.csv"))
                traces[mode].append(trace)
                print(
                    f"{complexity} seed={seed} {mode}: {trace.outcome} "
                    f"in {trace.duration_s:.1f} s, min distance {np.min(trace.min_dist):.2f} m"
                )

    report = compare(traces["normal"], traces["agility_enhanced"])
    doc = {
        "schema": 1,
        "run": {
            "complexities": list(COMPLEXITIES),
            "seeds": seeds,
            "modes": list(MODES),
            "preset": preset,
            "model": model_path,
            "uc_capacity_j": uc_capacity,
        },
        **report.to_dict(),
    }
    report_path = os.path.join(out, "report.json")
    _write_json(report_path, doc)
    write_fig7_power(os.path.join(out, "fig7_power.csv"), traces["normal"] + traces["agility_enhanced"])
    write_durations(os.path.join(out, "durations.csv"), traces["normal"] + traces["agility_enhanced"])

    print(f"wrote {report_path} plus fig7_power.csv and durations.csv")
    for metric, stats in report.improvements.items():
        mean = stats["mean"]
        mean_txt = f"{mean:+.1f}%" if mean is not None else "n/a"
        print(f"improvement {metric}: mean {mean_txt} (sign test p={stats['sign_test_p']:.2g})")
    for mode in MODES:
        print(f"success rate {mode}: {report.per_mode[mode]['success_rate']:.2f}")
    return 0


def cmd_evaluate(args) -> int:
    from .metrics import mae_report, write_fig5_mae

    cfg = _load_config(args.config, "evaluate")
    seed = _resolve_seed(args, cfg, required=False)
    members = int(_pick(args, cfg, "members", 10))
    if members < 1:
        raise UsageError("--members must be >= 1")
    alpha = float(_pick(args, cfg, "alpha", 1e-3))
    epochs = int(_pick(args, cfg, "epochs", 500))
    noise_w = float(_pick(args, cfg, "noise_w", 2.0))
    if noise_w < 0:
        raise UsageError("--noise-w must be >= 0")
    out = _out_dir(args, cfg)

    dataset_path = _pick(args, cfg, "dataset", None)
    if dataset_path is not None:
        dataset = _load_dataset(dataset_path)
    else:
        count = int(_pick(args, cfg, "count", 600))
        if count < 4:
            raise UsageError("--count must be >= 4")
        print(f"generating {count}-row dataset (seed {seed})")
        dataset = generate_dataset(count, seed)

    try:
        config = TrainConfig(seed=seed, learning_rate=alpha, epochs=epochs)
    except ValueError as exc:
        raise UsageError(str(exc))

    # held-out rows get seeded label noise so the backends are compared on
    # measurements they never saw, not on their own training labels
    train_ds, test_ds = split_dataset(dataset, config)
    rng = np.random.default_rng(seed + 77)
    noisy_test = LabeledDataset(
        test_ds.features, test_ds.labels + rng.normal(0.0, noise_w, size=len(test_ds))
    )

    single, _ = train_predictor(train_ds, config, backend="deterministic")
    ensemble, _ = train_predictor(train_ds, config, backend="ensemble", members=members)
    backends = {"single_mlp": single, "ensemble": ensemble}

    report = mae_report(backends, noisy_test)
    report_path = os.path.join(out, "evaluate.json")
    _write_json(report_path, {"schema": 1, "noise_w": noise_w, **report})
    write_fig5_mae(os.path.join(out, "fig5_mae.csv"), backends, noisy_test)

    print(f"wrote {report_path} and fig5_mae.csv ({report['n_rows']} test rows)")
    for name in sorted(backends):
        entry = report["backends"][name]
        print(
            f"{name}: MAE {entry['mae_w']:.3f} W, max error {entry['max_error_w']:.3f} W, "
            f"peak window {entry['peak_window_mae_w']:.3f} W"
        )
    ratio = report["ratios"]["ensemble_over_single_mlp"]["mae_w"]
    if ratio is not None:
        print(f"ensemble/single MAE ratio: {ratio:.3f}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_common(sub):
    sub.add_argument("--config", help="JSON config file (schema 1); flags override it")
    sub.add_argument("--out", help="output directory (default aeps_out)")
    sub.add_argument("--seed", type=int, help="base RNG seed (fallback: AEPS_SEED)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aeps",
        description="Mission simulator and benchmark for an agility-enhanced power supply.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="plan seeded missions and write a labeled dataset CSV")
    _add_common(p)
    p.add_argument("--count", type=int, help="number of rows (default 1100)")
    p.add_argument("--preset", choices=sorted(DEMAND_PRESETS), help="demand coefficient preset")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="fit a demand predictor on a dataset CSV")
    _add_common(p)
    p.add_argument("--dataset", help="labeled dataset CSV from the generate command")
    p.add_argument("--backend", choices=("deterministic", "ensemble"))
    p.add_argument("--members", type=int, help="ensemble size (default 10)")
    p.add_argument("--alpha", type=float, help="learning rate (default 1e-3)")
    p.add_argument("--epochs", type=int, help="training epochs (default 500)")
    p.add_argument("--batch-size", dest="batch_size", type=int, help="batch size (default 1100)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("simulate", help="fly one mission and write its trace and summary")
    _add_common(p)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--scenario", help="scenario JSON (otherwise generated from --complexity/--seed)")
    p.add_argument("--complexity", choices=COMPLEXITIES)
    p.add_argument("--model", help="trained model JSON (required for agility_enhanced)")
    p.add_argument("--preset", choices=sorted(DEMAND_PRESETS), help="demand coefficient preset")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("benchmark", help="paired normal-vs-enhanced benchmark over seeded scenarios")
    _add_common(p)
    p.add_argument("--runs", type=int, help="seeds per scenario class (default 10)")
    p.add_argument("--model", help="trained model JSON for the enhanced missions")
    p.add_argument("--preset", choices=sorted(DEMAND_PRESETS), help="demand coefficient preset")
    p.add_argument(
        "--uc-capacity-j",
        dest="uc_capacity_j",
        type=float,
        help="override ultracapacitor capacity in joules (0 ablates surge power)",
    )
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("evaluate", help="compare predictor backends on a noise-injected test set")
    _add_common(p)
    p.add_argument("--dataset", help="labeled dataset CSV (otherwise generated)")
    p.add_argument("--count", type=int, help="rows to generate when no dataset is given (default 600)")
    p.add_argument("--members", type=int, help="ensemble size (default 10)")
    p.add_argument("--alpha", type=float, help="learning rate (default 1e-3)")
    p.add_argument("--epochs", type=int, help="training epochs (default 500)")
    p.add_argument("--noise-w", dest="noise_w", type=float, help="test label noise sigma in watts")
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - boundary: report and exit nonzero
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
