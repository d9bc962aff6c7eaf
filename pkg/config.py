"""
Run configuration: one JSON file drives every subcommand.

Precedence for every setting is command-line flag > environment > file >
default. The environment supplies MTBE_SEED and MTBE_WORKERS (a `.env` file
in the working directory is honoured).
"""

import os
from pathlib import Path
from typing import List, Optional, Tuple, Union

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from charts import Direction, MewmaConfig, PewmaConfig, ShewhartTbeConfig
from errors import ConfigError
from model_gumbel import MIN_DELTA, MODEL_PRESETS, GumbelBveParams
from scenarios import AlarmClock, Grouping, ShiftSpec
from simulation import ChartFamily, Mode, SteadyStateConfig, build_chart

load_dotenv()

FULL_REPS = 100_000
FULL_REPS_PER_EVAL = 20_000
QUICK_REPS = 10_000
QUICK_REPS_PER_EVAL = 2_000


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ModelSection(_Section):
    preset: Optional[int] = Field(default=None, ge=1, le=4, description="In-control model 1-4 (default 1)")
    theta1: Optional[float] = Field(default=None, gt=0, description="Mean TBE of stream 1")
    theta2: Optional[float] = Field(default=None, gt=0, description="Mean TBE of stream 2")
    delta: Optional[float] = Field(default=None, ge=MIN_DELTA, le=1.0, description="Dependence parameter")

    @model_validator(mode="after")
    def _all_or_none(self):
        given = [v is not None for v in (self.theta1, self.theta2, self.delta)]
        if any(given) and not all(given):
            raise ValueError("give theta1, theta2 and delta together, or none of them to use the preset")
        if any(given) and self.preset is not None:
            raise ValueError("give either a preset or theta1, theta2 and delta, not both")
        return self

    def params(self) -> GumbelBveParams:
        if self.theta1 is None:
            return MODEL_PRESETS[self.preset or 1]
        return GumbelBveParams(self.theta1, self.theta2, self.delta)


class ChartSection(_Section):
    family: ChartFamily = ChartFamily.MEWMA
    lam: float = Field(default=0.1, gt=0, le=1, description="EWMA smoothing constant")
    direction: Direction = Direction.UPPER
    clock: Optional[AlarmClock] = Field(default=None, description="Default: per_stream for pewma")
    h: Optional[float] = Field(default=None, gt=0, description="MEWMA control limit")
    scale: Optional[float] = Field(default=None, gt=0, description="Paired EWMA limits as c * theta_0j")
    limits: Optional[Tuple[float, float]] = Field(default=None, description="Explicit paired EWMA limits")
    shewhart_lower: Optional[List[float]] = None
    shewhart_upper: Optional[List[float]] = None
    grouping: Grouping = Grouping.VECTOR
    streams: List[str] = Field(default_factory=lambda: ["1", "2"])

    def resolved_clock(self) -> AlarmClock:
        if self.clock is not None:
            return self.clock
        return AlarmClock.PER_STREAM if self.family is ChartFamily.PEWMA else AlarmClock.COMPLETE_VECTOR


class SimulationSection(_Section):
    target_ats0: float = Field(default=200.0, gt=0)
    n_reps: Optional[int] = Field(default=None, ge=1)
    reps_per_eval: Optional[int] = Field(default=None, ge=1)
    burn_in: int = Field(default=50, ge=0)
    burn_in_time: float = Field(default=50.0, ge=0)
    rel_tol: float = Field(default=0.01, gt=0, le=0.1)
    seed: int = Field(default=0, ge=0)
    mode: Mode = Mode.STEADY_STATE
    shifts: Optional[List[Tuple[float, float]]] = None
    quick: bool = False
    max_samples: int = Field(default=10 ** 6, ge=1)
    max_censored_fraction: float = Field(default=0.001, ge=0, le=1)
    lambdas: List[float] = Field(default_factory=list)
    models: List[int] = Field(default_factory=lambda: [1, 2, 3, 4])
    workers: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _check_values(self):
        for m1, m2 in self.shifts or []:
            if m1 <= 0 or m2 <= 0:
                raise ValueError(f"shift multipliers must be positive, got ({m1}, {m2})")
        for lam in self.lambdas:
            if not 0 < lam <= 1:
                raise ValueError(f"swept smoothing constants must lie in (0, 1], got {lam}")
        for model in self.models:
            if model not in MODEL_PRESETS:
                raise ValueError(f"unknown model preset {model}")
        return self

    @property
    def effective_n_reps(self) -> int:
        if self.n_reps is not None:
            return self.n_reps
        return QUICK_REPS if self.quick else FULL_REPS

    @property
    def effective_reps_per_eval(self) -> int:
        if self.reps_per_eval is not None:
            return self.reps_per_eval
        return QUICK_REPS_PER_EVAL if self.quick else FULL_REPS_PER_EVAL

    def shift_specs(self) -> List[ShiftSpec]:
        return [ShiftSpec(m1, m2) for m1, m2 in (self.shifts if self.shifts is not None else [(1.0, 1.0)])]

    def steady_state(self) -> SteadyStateConfig:
        return SteadyStateConfig(burn_in=self.burn_in, burn_in_time=self.burn_in_time)


class OutputSection(_Section):
    table_csv: Optional[str] = None
    scatter_csv: Optional[str] = None
    calibration_csv: Optional[str] = None
    ats_csv: Optional[str] = None


class RunConfig(_Section):
    model: ModelSection = Field(default_factory=ModelSection)
    chart: ChartSection = Field(default_factory=ChartSection)
    simulation: SimulationSection = Field(default_factory=SimulationSection)
    output: OutputSection = Field(default_factory=OutputSection)

    @classmethod
    def from_mapping(cls, data: dict) -> "RunConfig":
        try:
            return cls.model_validate(data)
        except ValidationError as e:
            raise ConfigError(f"invalid configuration:\n{e}") from None

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            return cls.model_validate_json(text)
        except ValidationError as e:
            raise ConfigError(f"invalid configuration:\n{e}") from None

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read configuration {path}: {e}") from None
        return cls.from_json(text)

    def to_json(self) -> str:
        return self.model_dump_json(exclude_none=True, indent=2)

    def with_overrides(self, **dotted) -> "RunConfig":
        """
        Apply `section__key=value` overrides, skipping None values. A preset
        replaces explicit model parameters.
        """
        data = self.model_dump(mode="json", exclude_none=True)
        for dotted_key, value in dotted.items():
            if value is None:
                continue
            section, key = dotted_key.split("__", 1)
            if dotted_key == "model__preset":
                data["model"] = {}
            data.setdefault(section, {})[key] = value
        return RunConfig.from_mapping(data)

    def with_environment(self) -> "RunConfig":
        env_seed = os.getenv("MTBE_SEED")
        env_workers = os.getenv("MTBE_WORKERS")
        try:
            seed = int(env_seed) if env_seed else None
            workers = int(env_workers) if env_workers else None
        except ValueError as e:
            raise ConfigError(f"MTBE_SEED / MTBE_WORKERS must be integers: {e}") from None
        return self.with_overrides(simulation__seed=seed, simulation__workers=workers)

    @property
    def workers(self) -> int:
        return self.simulation.workers or 1

    def build_chart(self) -> Union[MewmaConfig, PewmaConfig, ShewhartTbeConfig]:
        """Chart with the explicit limits given in the [chart] section."""
        chart = self.chart
        params = self.model.params()
        if chart.family is ChartFamily.SHEWHART:
            if chart.shewhart_lower is None or chart.shewhart_upper is None:
                raise ConfigError("the shewhart chart needs shewhart_lower and shewhart_upper")
            return ShewhartTbeConfig(tuple(chart.shewhart_lower), tuple(chart.shewhart_upper))
        if chart.family is ChartFamily.MEWMA:
            if chart.h is None:
                raise ConfigError("the mewma chart needs a control limit h (run `calibrate` first)")
            return build_chart(ChartFamily.MEWMA, params, chart.lam, chart.h)
        if chart.limits is not None:
            return PewmaConfig(lam=chart.lam, theta0=params.theta, direction=chart.direction, limits=chart.limits)
        if chart.scale is None:
            raise ConfigError("the pewma chart needs `scale` or explicit `limits` (run `calibrate` first)")
        return build_chart(ChartFamily.PEWMA, params, chart.lam, chart.scale, chart.direction)
