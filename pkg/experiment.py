"""
Comparison grid: MEWMA on complete vectors against paired one-sided EWMA
charts, four in-control models, three decreasing and three increasing shifts,
steady-state ATS with limits calibrated to a common in-control ATS.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd

from charts import Direction
from model_gumbel import MODEL_PRESETS, GumbelBveParams
from scenarios import NULL_SHIFT, AlarmClock, ShiftSpec, VectorScenario
from simulation import (
    AtsEstimate,
    CalibrationResult,
    ChartFamily,
    Mode,
    SteadyStateConfig,
    build_chart,
    calibrate,
    estimate_ats,
)

logger = logging.getLogger(__name__)

LOW_SHIFTS = (ShiftSpec(0.5, 1.0), ShiftSpec(1.0, 0.5), ShiftSpec(0.5, 0.5))
UP_SHIFTS = (ShiftSpec(2.0, 1.0), ShiftSpec(1.0, 2.0), ShiftSpec(2.0, 2.0))

TABLE_COLUMNS = [
    "model", "shift1", "shift2", "direction", "method", "lambda", "limit_spec",
    "ats", "stderr", "n_runs", "n_discarded", "n_censored", "arl", "winner",
]
SCATTER_COLUMNS = ["model", "shift_label", "mewma_ats", "pewma_ats"]

# Published comparison grid: (model, direction, shift) -> (MEWMA ATS, PEWMA ATS)
REFERENCE_ATS: Dict[Tuple[int, str, Tuple[float, float]], Tuple[float, float]] = {
    (1, "lower", (0.5, 1.0)): (57.37, 23.49), (2, "lower", (0.5, 1.0)): (42.09, 21.50),
    (3, "lower", (0.5, 1.0)): (51.99, 31.42), (4, "lower", (0.5, 1.0)): (40.57, 23.03),
    (1, "lower", (1.0, 0.5)): (40.98, 16.58), (2, "lower", (1.0, 0.5)): (27.08, 14.16),
    (3, "lower", (1.0, 0.5)): (94.52, 52.10), (4, "lower", (1.0, 0.5)): (79.05, 42.07),
    (1, "lower", (0.5, 0.5)): (18.15, 9.28), (2, "lower", (0.5, 0.5)): (34.12, 9.96),
    (3, "lower", (0.5, 0.5)): (37.19, 20.13), (4, "lower", (0.5, 0.5)): (49.41, 21.90),
    (1, "upper", (2.0, 1.0)): (25.57, 24.85), (2, "upper", (2.0, 1.0)): (19.41, 22.04),
    (3, "upper", (2.0, 1.0)): (105.53, 89.20), (4, "upper", (2.0, 1.0)): (90.72, 88.05),
    (1, "upper", (1.0, 2.0)): (35.79, 35.07), (2, "upper", (1.0, 2.0)): (30.41, 34.91),
    (3, "upper", (1.0, 2.0)): (58.10, 47.37), (4, "upper", (1.0, 2.0)): (46.70, 40.10),
    (1, "upper", (2.0, 2.0)): (24.26, 23.33), (2, "upper", (2.0, 2.0)): (28.27, 24.47),
    (3, "upper", (2.0, 2.0)): (71.52, 53.63), (4, "upper", (2.0, 2.0)): (82.67, 52.30),
}
REFERENCE_MEWMA_H = {1: 6.90, 2: 7.40, 3: 3.49, 4: 3.46}


@dataclass(frozen=True)
class ExperimentSpec:
    model: int
    lam: float
    direction: Direction
    shifts: Tuple[ShiftSpec, ...]
    target_ats0: float = 200.0
    n_reps: int = 100_000
    reps_per_eval: int = 20_000
    base_seed: int = 0
    burn_in: int = 50
    rel_tol: float = 0.01
    pewma_clock: AlarmClock = AlarmClock.PER_STREAM
    params: Optional[GumbelBveParams] = None

    @property
    def in_control(self) -> GumbelBveParams:
        return self.params if self.params is not None else MODEL_PRESETS[self.model]


@dataclass
class Table1Result:
    table: pd.DataFrame
    scatter: pd.DataFrame
    calibrations: List[CalibrationResult] = field(default_factory=list)
    mewma_limits: Dict[int, float] = field(default_factory=dict)  # calibrated h per model

    @property
    def n_cells(self) -> int:
        return len(self.scatter)

    @property
    def pewma_at_most_mewma(self) -> int:
        return int((self.scatter["pewma_ats"] <= self.scatter["mewma_ats"]).sum())

    @property
    def pewma_strict_wins(self) -> int:
        return int((self.scatter["pewma_ats"] < self.scatter["mewma_ats"]).sum())

    def summary_line(self) -> str:
        return (
            f"PEWMA ATS <= MEWMA ATS in {self.pewma_at_most_mewma} of {self.n_cells} cells "
            f"({self.pewma_strict_wins} strictly lower)"
        )


def table1_specs(
    lam: float,
    models: Sequence[int] = (1, 2, 3, 4),
    **overrides,
) -> List[ExperimentSpec]:
    specs = []
    for model in models:
        specs.append(ExperimentSpec(model, lam, Direction.LOWER, LOW_SHIFTS, **overrides))
        specs.append(ExperimentSpec(model, lam, Direction.UPPER, UP_SHIFTS, **overrides))
    return specs


def _row(spec: ExperimentSpec, shift: ShiftSpec, method: ChartFamily, calibration: CalibrationResult,
         estimate: AtsEstimate) -> dict:
    return {
        "model": spec.model,
        "shift1": shift.multiplier1,
        "shift2": shift.multiplier2,
        "direction": spec.direction.value,
        "method": method.value,
        "lambda": spec.lam,
        "limit_spec": calibration.limit_spec,
        "ats": estimate.mean_ats,
        "stderr": estimate.std_error,
        "n_runs": estimate.n_runs,
        "n_discarded": estimate.n_discarded,
        "n_censored": estimate.n_censored,
        "arl": estimate.mean_run_length,
        "winner": False,
    }


def run_table1(specs: Sequence[ExperimentSpec], workers: int = 1) -> Table1Result:
    """
    Calibrate, then estimate the steady-state ATS of both methods for every
    shift of every spec. The null shift row of each spec is the in-control check.
    MEWMA limits do not depend on the direction and are calibrated once per model.
    """
    rows: List[dict] = []
    scatter: List[dict] = []
    calibrations: List[CalibrationResult] = []
    mewma_limits: Dict[int, float] = {}
    mewma_cache: Dict[Tuple[int, float, GumbelBveParams], CalibrationResult] = {}

    for spec in specs:
        steady = SteadyStateConfig(burn_in=spec.burn_in)
        common = dict(
            target_ats0=spec.target_ats0, rel_tol=spec.rel_tol, reps_per_eval=spec.reps_per_eval,
            base_seed=spec.base_seed, n_reps=spec.n_reps, steady=steady, workers=workers,
        )
        key = (spec.model, spec.lam, spec.in_control)
        if key not in mewma_cache:
            mewma_cache[key] = calibrate(spec.in_control, ChartFamily.MEWMA, spec.lam, **common)
            calibrations.append(mewma_cache[key])
            mewma_limits[spec.model] = mewma_cache[key].limit
        mewma_cal = mewma_cache[key]
        pewma_cal = calibrate(
            spec.in_control, ChartFamily.PEWMA, spec.lam, direction=spec.direction,
            clock=spec.pewma_clock, **common,
        )
        calibrations.append(pewma_cal)
        methods = (
            (ChartFamily.MEWMA, mewma_cal, AlarmClock.COMPLETE_VECTOR),
            (ChartFamily.PEWMA, pewma_cal, spec.pewma_clock),
        )

        for shift in (NULL_SHIFT, *spec.shifts):
            scenario = VectorScenario(spec.in_control, shift)
            cell = {}
            for family, cal, clock in methods:
                chart = build_chart(family, spec.in_control, spec.lam, cal.limit, spec.direction)
                estimate = estimate_ats(
                    scenario, chart, Mode.STEADY_STATE, spec.n_reps, spec.base_seed + 2, steady, clock, workers,
                )
                cell[family] = estimate
                rows.append(_row(spec, shift, family, cal, estimate))
            if shift.is_null:
                continue
            mewma_ats = cell[ChartFamily.MEWMA].mean_ats
            pewma_ats = cell[ChartFamily.PEWMA].mean_ats
            rows[-1 if pewma_ats < mewma_ats else -2]["winner"] = True
            scatter.append({
                "model": spec.model, "shift_label": shift.label,
                "mewma_ats": mewma_ats, "pewma_ats": pewma_ats,
            })
            logger.info("model %d %s: MEWMA %.2f, PEWMA %.2f", spec.model, shift.label, mewma_ats, pewma_ats)

    return Table1Result(
        table=pd.DataFrame(rows, columns=TABLE_COLUMNS),
        scatter=pd.DataFrame(scatter, columns=SCATTER_COLUMNS),
        calibrations=calibrations,
        mewma_limits=mewma_limits,
    )


def reference_deviation(result: Table1Result) -> pd.DataFrame:
    """Relative deviation of each reproduced cell from the published grid."""
    records = []
    for row in result.table.itertuples(index=False):
        key = (row.model, row.direction, (row.shift1, row.shift2))
        if key not in REFERENCE_ATS:
            continue
        reference = REFERENCE_ATS[key][0 if row.method == ChartFamily.MEWMA.value else 1]
        records.append({
            "model": row.model, "direction": row.direction, "shift1": row.shift1, "shift2": row.shift2,
            "method": row.method, "ats": row.ats, "reference_ats": reference,
            "rel_deviation": (row.ats - reference) / reference,
        })
    return pd.DataFrame(records)


LIMIT_GAP_COLUMNS = ["model", "lambda", "h", "reference_h", "rel_gap"]


def limit_gaps(result: Table1Result, lam: float) -> pd.DataFrame:
    """
    Calibrated MEWMA h of each model next to the published h. The smoothing
    constant behind the published limits is unknown; sweeping lambda and
    reading this frame shows which value it most likely was.
    """
    records = []
    for model, h in sorted(result.mewma_limits.items()):
        reference = REFERENCE_MEWMA_H.get(model, math.nan)
        records.append({
            "model": model, "lambda": lam, "h": h,
            "reference_h": reference, "rel_gap": (h - reference) / reference,
        })
    return pd.DataFrame(records, columns=LIMIT_GAP_COLUMNS)


def format_table(result: Table1Result) -> str:
    """Aligned text rendering; the lower ATS of each cell is starred."""
    view = result.table.copy()
    view["ats"] = [f"{a:.2f}{'*' if w else ''}" for a, w in zip(view["ats"], view["winner"])]
    view["stderr"] = view["stderr"].map(lambda s: f"{s:.2f}")
    view = view.drop(columns=["winner", "n_runs", "arl"])
    return view.to_string(index=False)
