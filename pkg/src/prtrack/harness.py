"""Command-line harness around the synthetic tracking benchmarks.

Subcommands
-----------
compare-losses   track the benchmark suite once per loss model (l2, rl2,
                 nll, kl) and write per-model AUC / OP columns as CSV
sigma-sweep      AUC of the divergence-loss tracker as one label width
                 (sigma_tc or sigma_bb) sweeps over a list of values
track            run one sequence, writing a per-frame trace and metrics
dump-density     run to a chosen frame and dump the stage-1 center density
                 plus two box-scorer slices as text grids
selftest         quick internal numeric checks, no configuration needed

Common flags: --config <json>, --seed <int>, --out <dir>, --jobs <n>.
Exit codes: 0 success, 2 bad usage or configuration, 1 numeric failure.

Configuration is a JSON document; unknown keys anywhere are rejected.
Top-level sections (each optional, defaults apply):

    tracker   tracker settings, same field names as TrackerConfig
    suite     {"scenarios": [<spec>, ...], "repetitions": n}
    sweep     {"parameter": "sigma_tc" | "sigma_bb", "values": [..]}
    track     {"scenario": <spec>}
    dump      {"scenario": <spec>, "frame_index": n, "slice_cells": odd n}

A scenario <spec> is a preset name, or an object with an optional "preset"
key plus Scenario field overrides ("seed" is reserved: every run derives
its sequence seed from --seed so that repetitions are reproducible).

Determinism: each (scenario, repetition) cell owns its RNG streams, seeded
as master + 103 * scenario_index + 10007 * repetition (the tracker stream
adds a fixed offset), so outputs are bit-identical for equal (config,
seed) regardless of --jobs, and the loss models see identical sequences.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import center_optimizer, losses
from .errors import DomainError, NumericError, PrtrackError, UsageError
from .gridmath import (
    FeatureMap,
    Grid2D,
    Kernel2D,
    conv_adjoint,
    conv_apply,
    dump_grid,
)
from .labels import GaussianLabel, label_grid
from .tracker import (
    Scenario,
    TrackerConfig,
    evaluate,
    generate_sequence,
    run_sequence,
    track_init,
    track_step,
    write_track_csv,
)

__all__ = ["RunConfig", "load_config", "SCENARIO_PRESETS", "MODEL_ORDER", "main"]

MODEL_ORDER = ("l2", "rl2", "nll", "kl")
TRACKER_RNG_OFFSET = 7_654_321

SCENARIO_PRESETS: dict[str, dict] = {
    # A target parked on a cell center, nothing else in the scene.
    "static": dict(
        name="static", num_frames=100, start_x=20.0, start_y=20.0,
    ),
    # Smooth sub-cell motion and light noise, no distractors.
    "drift": dict(
        name="drift", num_frames=60, start_x=14.0, start_y=14.0,
        velocity_x=0.25, velocity_y=0.18, osc_amp_x=2.0, osc_amp_y=1.5,
        osc_period=37.0, noise_level=0.05,
    ),
    # Full occlusion window on a slowly moving target.
    "occlusion": dict(
        name="occlusion", num_frames=70, start_x=16.0, start_y=18.0,
        velocity_x=0.15, velocity_y=0.10, noise_level=0.05,
        occlusions=((30, 42),),
    ),
    # Two similar blobs crossing near a moving target.  The broad blob makes
    # the true center ambiguous at roughly the cell scale, which is the
    # regime the label width is meant to model.
    "distractors": dict(
        name="distractors", num_frames=60, start_x=14.0, start_y=14.0,
        velocity_x=0.30, velocity_y=0.22, osc_amp_x=2.5, osc_amp_y=2.0,
        osc_period=29.0, noise_level=0.05, blob_radius=3.0,
        distractor_count=2, distractor_similarity=0.7,
    ),
    # Distractors plus a mid-sequence occlusion.
    "distractors_occlusion": dict(
        name="distractors_occlusion", num_frames=60, start_x=30.0, start_y=30.0,
        velocity_x=-0.25, velocity_y=-0.20, osc_amp_x=2.0, osc_amp_y=2.5,
        osc_period=31.0, noise_level=0.05, blob_radius=3.0,
        distractor_count=2, distractor_similarity=0.7, occlusions=((28, 36),),
    ),
}

_SCENARIO_FIELDS = {f.name: f for f in dataclasses.fields(Scenario)}
_TRACKER_FIELDS = {f.name: f for f in dataclasses.fields(TrackerConfig)}


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration for every subcommand."""

    tracker: TrackerConfig
    scenarios: tuple
    repetitions: int
    sweep_parameter: str
    sweep_values: tuple[float, ...]
    track_scenario: object
    dump_scenario: object
    dump_frame_index: int
    dump_slice_cells: int


_DEFAULTS = dict(
    scenarios=("distractors", "distractors_occlusion"),
    repetitions=5,
    sweep_parameter="sigma_tc",
    sweep_values=(0.00015, 1.5, 15.0),
    track_scenario="distractors",
    dump_scenario="static",
    dump_frame_index=5,
    dump_slice_cells=41,
)


def _expect(cond: bool, message: str):
    if not cond:
        raise UsageError(message)


def _check_keys(d: dict, allowed, where: str):
    unknown = sorted(set(d) - set(allowed))
    _expect(not unknown, f"unknown key(s) {unknown} in {where}; allowed: {sorted(allowed)}")


def _as_number(v, where: str) -> float:
    _expect(isinstance(v, (int, float)) and not isinstance(v, bool), f"{where} must be a number")
    return float(v)


def _validate_scenario_spec(spec, where: str):
    if isinstance(spec, str):
        _expect(spec in SCENARIO_PRESETS, f"{where}: unknown preset {spec!r}; presets: {sorted(SCENARIO_PRESETS)}")
        return spec
    _expect(isinstance(spec, dict), f"{where} must be a preset name or an object")
    allowed = set(_SCENARIO_FIELDS) - {"seed"} | {"preset"}
    _check_keys(spec, allowed, where)
    if "preset" in spec:
        _expect(
            spec["preset"] in SCENARIO_PRESETS,
            f"{where}: unknown preset {spec['preset']!r}; presets: {sorted(SCENARIO_PRESETS)}",
        )
    # Field-level semantics are checked when the Scenario is built.
    return dict(spec)


def resolve_scenario(spec, seed: int) -> Scenario:
    """Build a Scenario from a validated spec and the cell seed."""
    if isinstance(spec, str):
        params = dict(SCENARIO_PRESETS[spec])
    else:
        params = dict(spec)
        preset = params.pop("preset", None)
        if preset is not None:
            params = {**SCENARIO_PRESETS[preset], **params}
    if "occlusions" in params:
        params["occlusions"] = tuple(tuple(p) for p in params["occlusions"])
    params["seed"] = seed
    try:
        return Scenario(**params)
    except (DomainError, TypeError) as exc:
        raise UsageError(f"bad scenario spec: {exc}") from exc


def _build_tracker(overrides: dict) -> TrackerConfig:
    _check_keys(overrides, set(_TRACKER_FIELDS), "tracker section")
    params = dict(overrides)
    for key in ("proposal_weights", "proposal_sigmas"):
        if key in params:
            _expect(isinstance(params[key], (list, tuple)), f"tracker.{key} must be a list")
            params[key] = tuple(_as_number(v, f"tracker.{key}") for v in params[key])
    try:
        return TrackerConfig(**params)
    except (DomainError, TypeError) as exc:
        raise UsageError(f"bad tracker config: {exc}") from exc


def load_config(path: str | None) -> RunConfig:
    """Parse and validate a JSON config file; None loads pure defaults."""
    raw = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    _expect(isinstance(raw, dict), "config root must be a JSON object")
    _check_keys(raw, {"tracker", "suite", "sweep", "track", "dump"}, "config root")

    tracker = _build_tracker(raw.get("tracker", {}) or {})
    out = dict(_DEFAULTS)

    if "suite" in raw:
        suite = raw["suite"]
        _expect(isinstance(suite, dict), "suite must be an object")
        _check_keys(suite, {"scenarios", "repetitions"}, "suite section")
        if "scenarios" in suite:
            specs = suite["scenarios"]
            _expect(isinstance(specs, list) and specs, "suite.scenarios must be a nonempty list")
            out["scenarios"] = tuple(
                _validate_scenario_spec(s, f"suite.scenarios[{i}]") for i, s in enumerate(specs)
            )
        if "repetitions" in suite:
            reps = suite["repetitions"]
            _expect(isinstance(reps, int) and reps >= 1, "suite.repetitions must be an int >= 1")
            out["repetitions"] = reps

    if "sweep" in raw:
        sweep = raw["sweep"]
        _expect(isinstance(sweep, dict), "sweep must be an object")
        _check_keys(sweep, {"parameter", "values"}, "sweep section")
        if "parameter" in sweep:
            _expect(
                sweep["parameter"] in ("sigma_tc", "sigma_bb"),
                "sweep.parameter must be 'sigma_tc' or 'sigma_bb'",
            )
            out["sweep_parameter"] = sweep["parameter"]
        if "values" in sweep:
            vals = sweep["values"]
            _expect(isinstance(vals, list) and vals, "sweep.values must be a nonempty list")
            values = tuple(_as_number(v, "sweep.values") for v in vals)
            _expect(all(v > 0 for v in values), "sweep.values must be positive")
            out["sweep_values"] = values

    if "track" in raw:
        section = raw["track"]
        _expect(isinstance(section, dict), "track must be an object")
        _check_keys(section, {"scenario"}, "track section")
        if "scenario" in section:
            out["track_scenario"] = _validate_scenario_spec(section["scenario"], "track.scenario")

    if "dump" in raw:
        section = raw["dump"]
        _expect(isinstance(section, dict), "dump must be an object")
        _check_keys(section, {"scenario", "frame_index", "slice_cells"}, "dump section")
        if "scenario" in section:
            out["dump_scenario"] = _validate_scenario_spec(section["scenario"], "dump.scenario")
        if "frame_index" in section:
            fi = section["frame_index"]
            _expect(isinstance(fi, int) and fi >= 1, "dump.frame_index must be an int >= 1")
            out["dump_frame_index"] = fi
        if "slice_cells" in section:
            sc = section["slice_cells"]
            _expect(
                isinstance(sc, int) and sc >= 3 and sc % 2 == 1,
                "dump.slice_cells must be an odd int >= 3",
            )
            out["dump_slice_cells"] = sc

    return RunConfig(tracker=tracker, **out)


def _cell_seed(master: int, scenario_index: int, repetition: int) -> int:
    return master + 103 * scenario_index + 10_007 * repetition


def _run_cell(spec, scenario_index: int, repetition: int, master_seed: int, cfg: TrackerConfig):
    seed = _cell_seed(master_seed, scenario_index, repetition)
    sequence = generate_sequence(resolve_scenario(spec, seed))
    rng = np.random.Generator(np.random.PCG64(seed + TRACKER_RNG_OFFSET))
    run = run_sequence(sequence, cfg, rng)
    return evaluate(sequence, run.boxes)


def _run_cells(tasks, jobs: int):
    """tasks: {key: zero-arg callable}; returns {key: result}, any order of execution."""
    if jobs <= 1:
        return {key: fn() for key, fn in tasks.items()}
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = {key: pool.submit(fn) for key, fn in tasks.items()}
        return {key: fut.result() for key, fut in futures.items()}


def _suite_metrics(cfg: RunConfig, tracker_cfg: TrackerConfig, master_seed: int, jobs: int):
    """Mean (auc, op50, op75) of one tracker over the whole suite."""
    tasks = {}
    for si, spec in enumerate(cfg.scenarios):
        for rep in range(cfg.repetitions):
            tasks[(si, rep)] = (
                lambda s=spec, i=si, r=rep: _run_cell(s, i, r, master_seed, tracker_cfg)
            )
    results = _run_cells(tasks, jobs)
    metrics = [results[key] for key in sorted(results)]
    return (
        float(np.mean([m.auc for m in metrics])),
        float(np.mean([m.op_at(0.50) for m in metrics])),
        float(np.mean([m.op_at(0.75) for m in metrics])),
    )


def _write_csv(path: Path, header: list[str], rows: list[list]):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(header)
        out.writerows(rows)


def cmd_compare_losses(cfg: RunConfig, seed: int, out_dir: Path, jobs: int) -> Path:
    """Benchmark all four loss models on identical sequences."""
    rows = []
    for model in MODEL_ORDER:
        tcfg = replace(cfg.tracker, loss_model=model, miss_mode="auto", scorer_init="train")
        auc, op50, op75 = _suite_metrics(cfg, tcfg, seed, jobs)
        rows.append([model, repr(auc), repr(op50), repr(op75)])
    path = out_dir / "compare_losses.csv"
    _write_csv(path, ["model", "auc", "op_0.50", "op_0.75"], rows)
    return path


def cmd_sigma_sweep(cfg: RunConfig, seed: int, out_dir: Path, jobs: int) -> Path:
    """AUC of the divergence-loss tracker as the swept sigma varies."""
    rows = []
    for value in sorted(cfg.sweep_values):
        tcfg = replace(
            cfg.tracker,
            loss_model="kl",
            miss_mode="auto",
            scorer_init="train",
            **{cfg.sweep_parameter: value},
        )
        auc, _, _ = _suite_metrics(cfg, tcfg, seed, jobs)
        rows.append([repr(float(value)), repr(auc)])
    path = out_dir / "sigma_sweep.csv"
    _write_csv(path, ["sigma", "auc"], rows)
    return path


def cmd_track(cfg: RunConfig, seed: int, out_dir: Path, jobs: int) -> Path:
    """Track one sequence; write a per-frame trace and summary metrics."""
    sequence = generate_sequence(resolve_scenario(cfg.track_scenario, _cell_seed(seed, 0, 0)))
    rng = np.random.Generator(np.random.PCG64(_cell_seed(seed, 0, 0) + TRACKER_RNG_OFFSET))
    run = run_sequence(sequence, cfg.tracker, rng)
    metrics = evaluate(sequence, run.boxes)
    trace_path = out_dir / "track_trace.csv"
    write_track_csv(run.trace_rows(sequence), trace_path)
    _write_csv(
        out_dir / "track_metrics.csv",
        ["auc", "op_0.50", "op_0.75"],
        [[repr(metrics.auc), repr(metrics.op_at(0.50)), repr(metrics.op_at(0.75))]],
    )
    return trace_path


def cmd_dump_density(cfg: RunConfig, seed: int, out_dir: Path) -> list[Path]:
    """Dump the stage-1 density and two box-scorer slices at one frame.

    The center density covers the search region around the previous box.
    The center slice evaluates exp(score) over box-center offsets of up to
    one full width/height; the size slice covers log-size offsets in
    [-log 3, log 3] (a third to three times the current size).
    """
    frame_index = cfg.dump_frame_index
    sequence = generate_sequence(resolve_scenario(cfg.dump_scenario, _cell_seed(seed, 0, 0)))
    _expect(
        frame_index < len(sequence.frames),
        f"dump.frame_index {frame_index} out of range for {len(sequence.frames)} frames",
    )
    rng = np.random.Generator(np.random.PCG64(_cell_seed(seed, 0, 0) + TRACKER_RNG_OFFSET))
    first = sequence.frames[0]
    state = track_init(first, first.ground_truth_box, cfg.tracker, rng)
    density = None
    for t in range(1, frame_index + 1):
        state, _, density = track_step(state, sequence.frames[t])

    n = cfg.dump_slice_cells
    _, _, w, h = state.current_box
    # Box parameters are (dx/w0, dy/h0, log w, log h) relative to the
    # stage-1 center, with the current size as reference, so offsets of one
    # full width/height are exactly +-1 in parameter space.
    offsets = np.linspace(-1.0, 1.0, n)
    center_slice = np.empty((n, n))
    for i, oy in enumerate(offsets):
        boxes = np.column_stack(
            [offsets, np.full(n, oy), np.full(n, math.log(w)), np.full(n, math.log(h))]
        )
        center_slice[i] = np.exp(state.scorer.value_batch(boxes))
    log_offsets = np.linspace(-math.log(3.0), math.log(3.0), n)
    size_slice = np.empty((n, n))
    for i, dh in enumerate(log_offsets):
        boxes = np.column_stack(
            [
                np.zeros(n),
                np.zeros(n),
                math.log(w) + log_offsets,
                np.full(n, math.log(h) + dh),
            ]
        )
        size_slice[i] = np.exp(state.scorer.value_batch(boxes))

    paths = [
        out_dir / f"center_density_f{frame_index}.txt",
        out_dir / f"bb_center_slice_f{frame_index}.txt",
        out_dir / f"bb_size_slice_f{frame_index}.txt",
    ]
    dump_grid(density.grid, paths[0])
    dump_grid(Grid2D(center_slice), paths[1])
    dump_grid(Grid2D(size_slice), paths[2])
    return paths


def cmd_selftest() -> int:
    """Fast standalone numeric checks; prints one line per check."""
    failures = 0

    def check(name: str, ok: bool, detail: str = ""):
        nonlocal failures
        print(f"{'PASS' if ok else 'FAIL'} {name}" + (f" ({detail})" if detail else ""))
        if not ok:
            failures += 1

    rng = np.random.Generator(np.random.PCG64(7))
    z = FeatureMap(rng.standard_normal((3, 8, 9)))
    wk = Kernel2D(rng.standard_normal((3, 3, 5)))
    u = Grid2D(rng.standard_normal((8, 9)))
    lhs = float((conv_apply(z, wk).values * u.values).sum())
    rhs = float((wk.values * conv_adjoint(z, u, (3, 5)).values).sum())
    check("correlation adjoint identity", abs(lhs - rhs) <= 1e-10 * (1 + abs(lhs)))

    scores = Grid2D(rng.standard_normal((4, 5)))
    lbl = label_grid(GaussianLabel(np.array([1.7, 2.2]), 1.0), (4, 5))
    lvg = losses.kl_grid_loss(scores, lbl)
    fd = np.zeros_like(scores.values)
    hstep = 1e-5
    for idx in np.ndindex(scores.values.shape):
        up, dn = scores.values.copy(), scores.values.copy()
        up[idx] += hstep
        dn[idx] -= hstep
        fd[idx] = (
            losses.kl_grid_loss(Grid2D(up), lbl).value - losses.kl_grid_loss(Grid2D(dn), lbl).value
        ) / (2 * hstep)
    err = float(np.abs(lvg.grad_scores.values - fd).max())
    check("divergence loss gradient vs finite differences", err < 1e-6, f"max err {err:.2e}")

    w0 = center_optimizer.TargetModel(Kernel2D(rng.standard_normal((2, 3, 3))))
    ocfg = center_optimizer.OptimizerConfig(regularization=0.5, iterations=1)
    model, _ = center_optimizer.optimize(w0, [], ocfg)
    check("ridge-only solve in one step", float(np.abs(model.weights.values).max()) < 1e-12)

    s = Grid2D(rng.standard_normal((3, 4)))
    delta = np.zeros((3, 4))
    delta[1, 2] = 1.0
    kl = losses.kl_grid_loss(s, Grid2D(delta), renormalize=False)
    nll = losses.nll_loss(s, (1.0, 2.0))
    check("delta-label divergence equals point loss", abs(kl.value - nll.value) < 1e-12)

    scenario = resolve_scenario("static", 11)
    scenario = dataclasses.replace(scenario, num_frames=15)
    seq = generate_sequence(scenario)
    run = run_sequence(seq, TrackerConfig())
    metrics = evaluate(seq, run.boxes)
    check("static sequence tracked", metrics.op_at(0.99) == 1.0, f"auc {metrics.auc:.3f}")

    print(("SELFTEST OK" if failures == 0 else f"SELFTEST FAILED ({failures})"))
    return 0 if failures == 0 else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="prtrack", description="synthetic probabilistic-tracking benchmarks"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, doc in (
        ("compare-losses", "benchmark the four loss models"),
        ("sigma-sweep", "sweep a label sigma for the divergence model"),
        ("track", "track one synthetic sequence"),
        ("dump-density", "dump density and scorer slices as text grids"),
        ("selftest", "run quick internal checks"),
    ):
        p = sub.add_parser(name, help=doc)
        p.add_argument("--config", default=None, help="JSON configuration file")
        p.add_argument("--seed", type=int, default=1, help="master seed (default 1)")
        p.add_argument("--out", default=".", help="output directory (default .)")
        p.add_argument("--jobs", type=int, default=1, help="parallel evaluation cells")
    args = parser.parse_args(argv)

    try:
        if args.command == "selftest":
            return cmd_selftest()
        cfg = load_config(args.config)
        if args.jobs < 1:
            raise UsageError(f"--jobs must be at least 1, got {args.jobs}")
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        if args.command == "compare-losses":
            paths = [cmd_compare_losses(cfg, args.seed, out_dir, args.jobs)]
        elif args.command == "sigma-sweep":
            paths = [cmd_sigma_sweep(cfg, args.seed, out_dir, args.jobs)]
        elif args.command == "track":
            paths = [cmd_track(cfg, args.seed, out_dir, args.jobs), out_dir / "track_metrics.csv"]
        else:
            paths = cmd_dump_density(cfg, args.seed, out_dir)
        for path in paths:
            print(f"wrote {path}")
        return 0
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 1
    except PrtrackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
