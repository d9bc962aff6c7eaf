"""
Command-line front end.

    python main.py calibrate --config run.json
    python main.py ats --config run.json
    python main.py table1 --config run.json --quick
    python main.py monitor events.log --config run.json
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import pandas as pd

from charts import Direction, MewmaConfig, ShewhartTbeConfig
from config import RunConfig
from errors import ConfigError, MalformedInputError, MtbeError
from event_log import read_event_log
from experiment import (
    LOW_SHIFTS,
    SCATTER_COLUMNS,
    TABLE_COLUMNS,
    UP_SHIFTS,
    ExperimentSpec,
    format_table,
    limit_gaps,
    reference_deviation,
    run_table1,
)
from model_gumbel import MODEL_PRESETS
from scenarios import AlarmClock, PointProcessScenario, VectorScenario, replay_event_log
from simulation import ChartFamily, calibrate, estimate_ats

logger = logging.getLogger(__name__)

CALIBRATION_COLUMNS = [
    "model", "family", "direction", "lambda", "limit", "limit_spec", "achieved_ats0",
    "stderr", "iterations", "reps_per_eval", "n_reps", "within_tolerance",
]
ATS_COLUMNS = TABLE_COLUMNS[:-1]


def _write_csv(frame: pd.DataFrame, path: Optional[str]) -> None:
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format="%.6g", lineterminator="\n")
        print(f"wrote {path}")


def _model_label(config: RunConfig) -> str:
    return str(config.model.preset or 1) if config.model.theta1 is None else "custom"


def cmd_calibrate(config: RunConfig) -> int:
    sim = config.simulation
    chart = config.chart
    if chart.family is ChartFamily.SHEWHART:
        raise ConfigError("calibration covers the mewma and pewma charts")
    params = config.model.params()
    records = []
    for lam in sim.lambdas or [chart.lam]:
        result = calibrate(
            params, chart.family, lam,
            target_ats0=sim.target_ats0, rel_tol=sim.rel_tol, reps_per_eval=sim.effective_reps_per_eval,
            base_seed=sim.seed, direction=chart.direction, n_reps=sim.effective_n_reps, mode=sim.mode,
            steady=sim.steady_state(), clock=chart.resolved_clock(), workers=config.workers,
        )
        records.append({
            "model": _model_label(config), "family": result.family.value, "direction": result.direction.value,
            "lambda": lam, "limit": result.limit, "limit_spec": result.limit_spec,
            "achieved_ats0": result.achieved_ats0, "stderr": result.std_error, "iterations": result.iterations,
            "reps_per_eval": result.reps_per_eval, "n_reps": result.n_reps,
            "within_tolerance": result.within_tolerance,
        })
    frame = pd.DataFrame(records, columns=CALIBRATION_COLUMNS)
    print(frame.to_string(index=False))
    _write_csv(frame, config.output.calibration_csv)
    return 0


def cmd_ats(config: RunConfig) -> int:
    sim = config.simulation
    chart_config = config.build_chart()
    params = config.model.params()
    rows = []
    for shift in sim.shift_specs():
        if isinstance(chart_config, ShewhartTbeConfig):
            scenario = PointProcessScenario((params.theta1, params.theta2), (shift.multiplier1, shift.multiplier2))
            limit_spec = f"hL={list(chart_config.lower)} hU={list(chart_config.upper)}"
        else:
            scenario = VectorScenario(params, shift)
            limit_spec = (f"h={chart_config.limit_h:.4g}" if isinstance(chart_config, MewmaConfig)
                          else " ".join(f"{v:.4g}" for v in chart_config.limits))
        estimate = estimate_ats(
            scenario, chart_config, sim.mode, sim.effective_n_reps, sim.seed, sim.steady_state(),
            config.chart.resolved_clock(), config.workers, max_censored_fraction=sim.max_censored_fraction,
            cap=sim.max_samples if isinstance(scenario, VectorScenario) else float(sim.max_samples),
        )
        rows.append({
            "model": _model_label(config), "shift1": shift.multiplier1, "shift2": shift.multiplier2,
            "direction": config.chart.direction.value, "method": config.chart.family.value,
            "lambda": config.chart.lam, "limit_spec": limit_spec, "ats": estimate.mean_ats,
            "stderr": estimate.std_error, "n_runs": estimate.n_runs, "n_discarded": estimate.n_discarded,
            "n_censored": estimate.n_censored, "arl": estimate.mean_run_length,
        })
    frame = pd.DataFrame(rows, columns=ATS_COLUMNS)
    print(frame.to_string(index=False))
    _write_csv(frame, config.output.ats_csv)
    return 0


def _table1_specs(config: RunConfig, lam: float) -> List[ExperimentSpec]:
    sim = config.simulation
    if sim.shifts is None:
        groups = [(Direction.LOWER, LOW_SHIFTS), (Direction.UPPER, UP_SHIFTS)]
    else:
        shifts = sim.shift_specs()
        lower = tuple(s for s in shifts if s.multiplier1 <= 1 and s.multiplier2 <= 1)
        upper = tuple(s for s in shifts if s not in lower)
        groups = [(d, g) for d, g in ((Direction.LOWER, lower), (Direction.UPPER, upper)) if g]
    options = dict(
        target_ats0=sim.target_ats0, n_reps=sim.effective_n_reps, reps_per_eval=sim.effective_reps_per_eval,
        base_seed=sim.seed, burn_in=sim.burn_in, rel_tol=sim.rel_tol,
        pewma_clock=config.chart.clock or AlarmClock.PER_STREAM,
    )
    return [
        ExperimentSpec(model, lam, direction, shifts, **options)
        for model in sim.models
        for direction, shifts in groups
    ]


def cmd_table1(config: RunConfig) -> int:
    sim = config.simulation
    tables, scatters = [], []
    for lam in sim.lambdas or [config.chart.lam]:
        specs = _table1_specs(config, lam)
        if not specs:
            continue
        result = run_table1(specs, workers=config.workers)
        print(f"\nlambda = {lam:g}")
        print(format_table(result))
        print(result.summary_line())
        deviation = reference_deviation(result)
        if not deviation.empty:
            print(f"largest relative deviation from the published grid: {deviation['rel_deviation'].abs().max():.1%}")
        for gap in limit_gaps(result, lam).itertuples(index=False):
            print(f"model {gap.model}: h={gap.h:.4g} (published {gap.reference_h:.4g}, gap {gap.rel_gap:+.1%})")
        tables.append(result.table)
        scatters.append(result.scatter)
    table = pd.concat(tables, ignore_index=True) if tables else pd.DataFrame(columns=TABLE_COLUMNS)
    scatter = pd.concat(scatters, ignore_index=True) if scatters else pd.DataFrame(columns=SCATTER_COLUMNS)
    if not tables:
        print(",".join(TABLE_COLUMNS))
    _write_csv(table, config.output.table_csv)
    _write_csv(scatter, config.output.scatter_csv)
    return 0


def cmd_monitor(log_path: str, config: RunConfig) -> int:
    chart = config.build_chart()
    streams = config.chart.streams
    try:
        events = read_event_log(log_path, streams)
    except OSError as e:
        raise MalformedInputError(f"cannot read event log {log_path}: {e}") from None
    alarms = replay_event_log(events, chart, config.chart.grouping, streams)
    for alarm in alarms:
        source = f" stream={alarm.source}" if alarm.source is not None else ""
        print(f"alarm t={alarm.timestamp:g}{source} statistic={alarm.statistic:.6g} after={alarm.index}")
    print(f"{len(alarms)} alarm{'s' if len(alarms) != 1 else ''}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mtbe", description="Time-between-events control chart evaluation")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="base seed (overrides MTBE_SEED and the file)")
    common.add_argument("--workers", type=int, help="worker processes (speed only)")
    common.add_argument("--lam", type=float, help="EWMA smoothing constant")
    common.add_argument("--family", choices=[f.value for f in ChartFamily])
    common.add_argument("--direction", choices=[d.value for d in Direction])
    common.add_argument("--model", type=int, choices=sorted(MODEL_PRESETS), help="in-control model preset")
    common.add_argument("--target", type=float, help="target in-control ATS")
    common.add_argument("--n-reps", type=int)
    common.add_argument("--quick", action="store_true", default=None, help="10^4 runs per estimate")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("calibrate", parents=[common], help="calibrate control limits to the target ATS")
    sub.add_parser("ats", parents=[common], help="estimate the ATS of a chart with given limits")
    sub.add_parser("table1", parents=[common], help="run the MEWMA vs paired EWMA comparison grid")
    monitor = sub.add_parser("monitor", parents=[common], help="replay an event log through a chart")
    monitor.add_argument("log", help="event log: one 'timestamp,stream_id' per line")
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig.load(args.config) if args.config else RunConfig()
    config = config.with_environment()
    return config.with_overrides(
        simulation__seed=args.seed,
        simulation__workers=args.workers,
        simulation__target_ats0=args.target,
        simulation__n_reps=args.n_reps,
        simulation__quick=args.quick,
        chart__lam=args.lam,
        chart__family=args.family,
        chart__direction=args.direction,
        model__preset=args.model,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        config = load_config(args)
        if args.command == "calibrate":
            return cmd_calibrate(config)
        if args.command == "ats":
            return cmd_ats(config)
        if args.command == "table1":
            return cmd_table1(config)
        return cmd_monitor(args.log, config)
    except MtbeError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
