"""Command-line surface: generate | train | simulate | sweep | verify.

Exit codes: 0 success, 2 configuration problem, 3 runtime/solver failure,
4 verification mismatch.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ModeSpec, ScenarioConfig, apply_seed_overrides, load_config
from .errors import (ConfigError, GridflexError, NumericalError,
                     SimulationError, SolverError, ValidationError,
                     VerificationMismatch, WeatherFormatError)
from .metrics import (daily_metrics, read_metrics_csv, window_summary,
                      write_metrics_csv)
from .pricing import load_checkpoint, offline_train, save_checkpoint, zero_bank
from .plots import (save_demand_figure, save_peaks_figure, save_price_figure,
                    write_plot_data)
from .scenario import write_weather_csv
from .simulation import (MODE_BENCHMARK, MODE_CLUSTERED, MODE_DIRECT,
                         MODE_TOU, MODE_VARIANTS, SimulationMode, load_trace,
                         run_horizon, write_trace)

PARTICIPATION_AXIS = (1.0 / 3.0, 2.0 / 3.0, 1.0)
ELASTICITY_AXIS = (1e4, 1e2, 1.0, 1e-2, 1e-4)
PENETRATION_AXIS = (0.0, 0.2, 0.5, 1.0)
ARCHETYPE_AXIS = ("denver", "los_angeles", "phoenix")
SCALE_AXIS = (1, 10)
HVAC_ONLY_AXIS = (False, True)
SWEEP_AXES = ("participation", "elasticity_scale", "penetration",
              "archetype", "scale_factor", "hvac_only")

VERIFY_TOL = 1e-9


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer, np.floating)):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o)}")


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _write_manifest(outdir: Path, cfg: ScenarioConfig, command: str,
                    **extra) -> None:
    payload = {
        "command": command,
        "config_fingerprint": cfg.fingerprint(),
        "package_version": __version__,
        "mode_variant": cfg.mode.variant,
        "epsilon": cfg.epsilon,
        "slot_hours": cfg.grid.slot_duration_hours,
        "n_households": cfg.population.n_households,
        "participation_rate": cfg.participation_rate,
        "seeds": dataclasses.asdict(cfg.seeds),
    }
    payload.update(extra)
    _write_json(outdir / "manifest.json", payload)


def _device_payload(spec) -> dict:
    out = {"kind": spec.kind}
    for f in dataclasses.fields(spec):
        v = getattr(spec, f.name)
        out[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
    return out


def _outdir(cfg: ScenarioConfig, args) -> Path:
    out = Path(args.out) if args.out else Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(cfg: ScenarioConfig, args, base_dir: Path) -> int:
    outdir = _outdir(cfg, args)
    pop = cfg.build_population()
    weather = cfg.load_weather(base_dir)
    write_weather_csv(outdir / "weather.csv", weather)
    pv_batt = sum(1 for hh in pop if hh.device("battery") is not None)
    _write_json(outdir / "population.json", {
        "config_fingerprint": cfg.fingerprint(),
        "n_households": len(pop),
        "participating_count": sum(hh.participating for hh in pop),
        "pv_battery_count": pv_batt,
        "households": [{
            "household_id": hh.household_id,
            "node_label": hh.node_label,
            "participating": hh.participating,
            "devices": [_device_payload(d) for d in hh.devices],
        } for hh in pop],
    })
    _write_manifest(outdir, cfg, "generate", weather_days=len(weather))
    print(f"wrote {len(pop)} households ({pv_batt} with PV+battery) and "
          f"{len(weather)} weather days to {outdir}")
    return 0


def cmd_train(cfg: ScenarioConfig, args, base_dir: Path) -> int:
    outdir = _outdir(cfg, args)
    weather = cfg.load_weather(base_dir)
    params = offline_train(weather, cfg.hyper, cfg.seeds.learner)
    bank = zero_bank(cfg.hyper.metric_for(cfg.grid.slots_per_day), cfg.hyper.k)
    save_checkpoint(outdir / "checkpoint.npz", params, bank)
    with open(outdir / "loss_trace.csv", "w", newline="",
              encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for i, v in enumerate(params.loss_trace):
            w.writerow([i, f"{v:.17g}"])
    _write_manifest(outdir, cfg, "train",
                    epochs=int(params.loss_trace.size),
                    final_loss=float(params.loss_trace[-1]))
    print(f"trained {cfg.hyper.k}-cluster classifier over {len(weather)} days "
          f"(final loss {params.loss_trace[-1]:.6f}); checkpoint in {outdir}")
    return 0


def _load_mode(cfg: ScenarioConfig, base_dir: Path) -> SimulationMode:
    classifier = bank = None
    if cfg.mode.variant == MODE_CLUSTERED:
        if cfg.mode.checkpoint is None:
            raise ConfigError("dynamic_clustered needs mode.checkpoint "
                              "(run the train subcommand first)")
        ckpt = Path(cfg.mode.checkpoint)
        if not ckpt.is_absolute():
            ckpt = base_dir / ckpt
        classifier, bank = load_checkpoint(ckpt)
    return cfg.mode.to_simulation_mode(classifier, bank)


def _run_pair(cfg: ScenarioConfig, base_dir: Path):
    """The configured run plus its price-oblivious reference."""
    pop = cfg.build_population()
    setup = cfg.to_setup(pop)
    weather = cfg.load_weather(base_dir)
    mode = _load_mode(cfg, base_dir)
    trace = run_horizon(setup, mode, weather)
    if cfg.mode.variant == MODE_BENCHMARK:
        bench = trace
    else:
        bench = run_horizon(setup, SimulationMode(variant=MODE_BENCHMARK),
                            weather)
    return trace, bench


def cmd_simulate(cfg: ScenarioConfig, args, base_dir: Path) -> int:
    outdir = _outdir(cfg, args)
    trace, bench = _run_pair(cfg, base_dir)
    write_trace(outdir / "trace.jsonl", trace)
    write_trace(outdir / "trace_benchmark.jsonl", bench)
    days = [d.aggregate_demand_kw for d in trace.days]
    days0 = [d.aggregate_demand_kw for d in bench.days]
    write_metrics_csv(outdir / "metrics.csv", days, days0, cfg.epsilon,
                      cfg.grid.slot_duration_hours)
    write_plot_data(outdir, trace, bench)
    fp = cfg.fingerprint()
    save_demand_figure(outdir / "demand.png", trace, bench, fp)
    save_price_figure(outdir / "prices.png", trace, fp)
    save_peaks_figure(outdir / "daily_peaks.png", trace, bench, fp)
    _write_manifest(outdir, cfg, "simulate", days=len(trace.days))
    s = window_summary(days, days0, cfg.epsilon, cfg.grid.slot_duration_hours)
    print(f"{cfg.mode.variant}: {len(days)} days, mean PDS "
          f"{s['pds_pct']:.2f}%, variation reduction "
          f"{s['variation_reduction_pct']:.2f}%, outputs in {outdir}")
    return 0


def _sweep_points(cfg: ScenarioConfig, axis: str):
    """(label, point-config) pairs with exactly one knob changed."""
    if axis == "participation":
        for v in PARTICIPATION_AXIS:
            yield f"{v:.4f}", dataclasses.replace(cfg, participation_rate=v)
    elif axis == "elasticity_scale":
        for v in ELASTICITY_AXIS:
            yield f"{v:g}", cfg  # handled through setup.gamma_scale below
    elif axis == "penetration":
        for v in PENETRATION_AXIS:
            yield f"{v:.2f}", dataclasses.replace(
                cfg, population=dataclasses.replace(
                    cfg.population, pv_battery_penetration=v))
    elif axis == "archetype":
        if cfg.weather.archetype is None:
            raise ConfigError("archetype sweep needs synthetic weather")
        for v in ARCHETYPE_AXIS:
            yield v, dataclasses.replace(
                cfg, weather=dataclasses.replace(cfg.weather, archetype=v))
    elif axis == "scale_factor":
        for v in SCALE_AXIS:
            yield f"{v}x", dataclasses.replace(
                cfg, population=dataclasses.replace(
                    cfg.population,
                    n_households=cfg.population.n_households * v))
    elif axis == "hvac_only":
        for v in HVAC_ONLY_AXIS:
            yield str(v).lower(), cfg  # handled through price_device_kinds
    else:
        raise ConfigError(f"unknown sweep axis {axis!r}")


def _benchmark_key(cfg: ScenarioConfig) -> str:
    # the reference run ignores prices, so mode/participation/hyper/elasticity
    # knobs cannot change it; only population, grid, weather and solver can
    d = cfg.canonical_dict()
    for k in ("participation_rate", "mode", "hyper", "epsilon"):
        d.pop(k)
    return json.dumps(d, sort_keys=True)


def cmd_sweep(cfg: ScenarioConfig, args, base_dir: Path) -> int:
    outdir = _outdir(cfg, args)
    axis = args.axis
    rows = []
    bench_cache: dict[str, object] = {}
    for label, point in _sweep_points(cfg, axis):
        gamma = float(label) if axis == "elasticity_scale" else 1.0
        hvac_only = axis == "hvac_only" and label == "true"
        pop = point.build_population()
        setup = point.to_setup(pop)
        if axis == "elasticity_scale":
            setup = dataclasses.replace(setup, gamma_scale=gamma)
        if hvac_only:
            setup = dataclasses.replace(setup,
                                        price_device_kinds=frozenset({"hvac"}))
        weather = point.load_weather(base_dir)
        mode = _load_mode(point, base_dir)
        trace = run_horizon(setup, mode, weather)
        key = _benchmark_key(point)
        if key not in bench_cache:
            bench_cache[key] = run_horizon(
                setup, SimulationMode(variant=MODE_BENCHMARK), weather)
        bench = bench_cache[key]
        pt_dir = outdir / f"point_{label}"
        pt_dir.mkdir(parents=True, exist_ok=True)
        write_trace(pt_dir / "trace.jsonl", trace)
        write_trace(pt_dir / "trace_benchmark.jsonl", bench)
        days = [d.aggregate_demand_kw for d in trace.days]
        days0 = [d.aggregate_demand_kw for d in bench.days]
        write_metrics_csv(pt_dir / "metrics.csv", days, days0, point.epsilon,
                          point.grid.slot_duration_hours)
        s = window_summary(days, days0, point.epsilon,
                           point.grid.slot_duration_hours)
        rows.append([axis, label, s["pds_pct"], s["mps_pct"], s["amps_pct"],
                     s["variation_reduction_pct"], s["energy_reduction_pct"],
                     s["load_factor"]])
        print(f"  {axis}={label}: PDS {s['pds_pct']:.2f}%")
    with open(outdir / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["axis", "value", "pds_pct", "mps_pct", "amps_pct",
                    "variation_reduction_pct", "energy_reduction_pct",
                    "load_factor"])
        for row in rows:
            w.writerow([row[0], row[1]] + [f"{v:.17g}" for v in row[2:]])
    _write_manifest(outdir, cfg, "sweep", axis=axis, points=len(rows))
    print(f"sweep over {axis}: {len(rows)} points, table in {outdir}")
    return 0


def _verify_metrics_file(pt_dir: Path, epsilon: float, slot_hours: float):
    trace = load_trace(pt_dir / "trace.jsonl")
    bench = load_trace(pt_dir / "trace_benchmark.jsonl")
    days = [d.aggregate_demand_kw for d in trace.days]
    days0 = [d.aggregate_demand_kw for d in bench.days]
    daily, summary = read_metrics_csv(pt_dir / "metrics.csv")
    mismatches = []
    expect = window_summary(days, days0, epsilon, slot_hours)
    for k, v in expect.items():
        got = summary[k]
        if abs(got - v) > VERIFY_TOL:
            mismatches.append((f"summary.{k}", got, v))
    for row in daily:
        m = daily_metrics(days[row["day"]], days0[row["day"]], epsilon,
                          slot_hours)
        for k in ("pds_pct", "delta_max_kw", "load_factor", "energy_kwh",
                  "qv", "grid_cost"):
            v = getattr(m, k)
            if abs(row[k] - v) > VERIFY_TOL:
                mismatches.append((f"day{row['day']}.{k}", row[k], v))
    return mismatches


def cmd_verify(args) -> int:
    outdir = Path(args.out)
    manifest_path = outdir / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"no manifest.json in {outdir}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    epsilon = float(manifest["epsilon"])
    slot_hours = float(manifest["slot_hours"])
    targets = []
    if (outdir / "metrics.csv").exists():
        targets.append(outdir)
    targets.extend(sorted(p.parent for p in outdir.glob("point_*/metrics.csv")))
    if not targets:
        raise ConfigError(f"nothing to verify in {outdir}")
    mismatches = []
    for t in targets:
        mismatches.extend((f"{t.name}/{k}" if t != outdir else k, a, b)
                          for k, a, b in
                          _verify_metrics_file(t, epsilon, slot_hours))
    if mismatches:
        lines = "\n".join(f"  {k}: emitted {a:.12g}, recomputed {b:.12g}"
                          for k, a, b in mismatches[:20])
        raise VerificationMismatch(
            f"{len(mismatches)} metric(s) disagree beyond {VERIFY_TOL:g}:\n"
            f"{lines}")
    print(f"verified {len(targets)} metrics table(s) against raw traces "
          f"(tolerance {VERIFY_TOL:g})")
    return 0


# ---------------------------------------------------------------------------
# argument plumbing


def _override_mode(mode: ModeSpec, variant: str) -> ModeSpec:
    return ModeSpec(
        variant=variant,
        tou_tiers=mode.tou_tiers if variant == MODE_TOU else None,
        max_rounds=mode.max_rounds,
        round_tol=mode.round_tol,
        gamma_scale=mode.gamma_scale if variant == MODE_DIRECT else None,
        checkpoint=mode.checkpoint if variant == MODE_CLUSTERED else None)


def _parse_overrides(items) -> dict:
    out = {}
    for item in items or []:
        name, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--seed-override takes name=int, got {item!r}")
        try:
            out[name] = int(value)
        except ValueError as exc:
            raise ConfigError(
                f"seed override {name!r} needs an integer, got {value!r}") from exc
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridflex",
        description="closed-loop demand flexibility simulator")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="YAML scenario configuration")
        p.add_argument("--out", help="output directory "
                       "(default: output_dir from the config)")
        p.add_argument("--seed-override", action="append", metavar="NAME=INT",
                       help="override a named seed (repeatable)")

    common(sub.add_parser("generate", help="write population + weather files"))
    common(sub.add_parser("train", help="train the day-regime classifier"))
    p_sim = sub.add_parser("simulate", help="run one mode over the horizon")
    common(p_sim)
    p_sim.add_argument("--mode", choices=MODE_VARIANTS,
                       help="override the configured mode variant")
    p_sweep = sub.add_parser("sweep", help="replay the scenario along one axis")
    common(p_sweep)
    p_sweep.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p_ver = sub.add_parser("verify",
                           help="recompute metrics from traces and compare")
    p_ver.add_argument("--out", required=True, help="run directory to verify")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            return cmd_verify(args)
        cfg = load_config(args.config)
        cfg = apply_seed_overrides(cfg, _parse_overrides(args.seed_override))
        base_dir = Path(args.config).resolve().parent
        if args.command == "simulate" and args.mode:
            cfg = dataclasses.replace(cfg,
                                      mode=_override_mode(cfg.mode, args.mode))
        if args.command == "generate":
            return cmd_generate(cfg, args, base_dir)
        if args.command == "train":
            return cmd_train(cfg, args, base_dir)
        if args.command == "simulate":
            return cmd_simulate(cfg, args, base_dir)
        if args.command == "sweep":
            return cmd_sweep(cfg, args, base_dir)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, WeatherFormatError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except VerificationMismatch as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return 4
    except GridflexError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
