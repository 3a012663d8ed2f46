"""Scenario definitions, ensemble execution and the two-dimensional shock sweep.

Built-in scenarios follow the standard battery: S0 is the no-intervention,
no-shock baseline; S1-S3 are single interventions (academic support,
curriculum redesign, financial support) with S4 their composition; S5-S7 are
the macro-shock scenarios (inflation only at 1.2, strikes only at 2.0, and
the combined crisis).  Intervention magnitudes are free parameters fixed by
calibration; shock multipliers are the scenario definition itself.

Realisations are independent given their derived seeds; ensembles and sweeps
aggregate in realisation-index order so results are byte-identical for any
worker count.  Sweeps reuse one cohort-seed sequence across grid points
(common random numbers), which keeps the amplification surface from being
dominated by sampling noise.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .curriculum import CurriculumGraph, curriculum_from_dict, curriculum_to_dict
from .engine import (
    DecisionCoefficients, InterventionModifiers, ResilienceDynamics, ShockConfig,
    LINEAR_CENTRED, PAPER_LITERAL, DEFAULT_COURSE_LOAD,
    effective_graph, run_realisation,
)
from .metrics import (
    RunMetrics, SweepCell, SweepResult, aggregate_stats, amplification,
    hazard_excess, hazard_curve, realisation_stats, RealisationStats,
)
from .population import PopulationParams

DEFAULT_BASE_SEED = 42
DEFAULT_N_AGENTS = 300
DEFAULT_N_REALISATIONS = 100
DEFAULT_HORIZON = 12

#: Calibrated intervention magnitudes (fixed by the calibration module's
#: block-2 search against the published scenario outcomes).
CALIBRATED_ACADEMIC_SUPPORT = 0.88
CALIBRATED_CURRICULUM_REDESIGN = 0.75
CALIBRATED_FINANCIAL_BOOST = 0.05

BUILTIN_SCENARIO_IDS = ("S0", "S1", "S2", "S3", "S4", "S5", "S6", "S7")


@dataclass(frozen=True)
class ScenarioSpec:
    """Complete, self-contained description of one simulation scenario."""

    id: str = "S0"
    shock: ShockConfig = field(default_factory=ShockConfig)
    interventions: InterventionModifiers = field(default_factory=InterventionModifiers)
    n_agents: int = DEFAULT_N_AGENTS
    n_realisations: int = DEFAULT_N_REALISATIONS
    horizon: int = DEFAULT_HORIZON
    base_seed: int = DEFAULT_BASE_SEED
    population: PopulationParams = field(default_factory=PopulationParams)
    coefficients: DecisionCoefficients = field(default_factory=DecisionCoefficients)
    dynamics: ResilienceDynamics = field(default_factory=ResilienceDynamics)
    course_load: int = DEFAULT_COURSE_LOAD
    curriculum: CurriculumGraph | None = None  # None = packaged default curriculum

    def __post_init__(self) -> None:
        if self.n_agents < 1:
            raise ValueError("n_agents must be >= 1")
        if self.n_realisations < 1:
            raise ValueError("n_realisations must be >= 1")
        # horizon 0 is tolerated as the degenerate empty run
        if not 0 <= self.horizon <= 12:
            raise ValueError("horizon must be in 0..12")
        if self.base_seed < 0:
            raise ValueError("base_seed must be >= 0")
        if self.course_load < 1:
            raise ValueError("course_load must be >= 1")


def builtin_scenario(scenario_id: str, base_seed: int = DEFAULT_BASE_SEED) -> ScenarioSpec:
    """Canonical spec for one of the built-in scenario ids S0..S7."""
    interventions = {
        "S0": InterventionModifiers(),
        "S1": InterventionModifiers(academic_support_factor=CALIBRATED_ACADEMIC_SUPPORT),
        "S2": InterventionModifiers(curriculum_redesign_factor=CALIBRATED_CURRICULUM_REDESIGN),
        "S3": InterventionModifiers(financial_support_boost=CALIBRATED_FINANCIAL_BOOST),
        "S4": InterventionModifiers(
            academic_support_factor=CALIBRATED_ACADEMIC_SUPPORT,
            curriculum_redesign_factor=CALIBRATED_CURRICULUM_REDESIGN,
            financial_support_boost=CALIBRATED_FINANCIAL_BOOST,
        ),
    }
    shocks = {
        "S5": ShockConfig(lambda_inf=1.2),
        "S6": ShockConfig(lambda_str=2.0),
        "S7": ShockConfig(lambda_inf=1.2, lambda_str=2.0),
    }
    if scenario_id not in BUILTIN_SCENARIO_IDS:
        raise ValueError(
            f"unknown scenario id {scenario_id!r}; valid ids: {', '.join(BUILTIN_SCENARIO_IDS)}")
    return ScenarioSpec(
        id=scenario_id,
        shock=shocks.get(scenario_id, ShockConfig()),
        interventions=interventions.get(scenario_id, InterventionModifiers()),
        base_seed=base_seed,
    )


# ---------------------------------------------------------------------------
# Ensemble execution
# ---------------------------------------------------------------------------

def _ensemble_chunk(payload: tuple[ScenarioSpec, tuple[int, ...]]) -> list[RealisationStats]:
    spec, indices = payload
    graph = effective_graph(spec)
    return [realisation_stats(run_realisation(spec, i, graph, record_rows=False))
            for i in indices]


def ensemble_stats(spec: ScenarioSpec, workers: int = 1) -> list[RealisationStats]:
    """Per-realisation stats for a whole ensemble, ordered by index."""
    indices = list(range(spec.n_realisations))
    if workers <= 1 or spec.n_realisations == 1:
        return _ensemble_chunk((spec, tuple(indices)))
    chunk_size = max(1, (len(indices) + workers * 4 - 1) // (workers * 4))
    chunks = [tuple(indices[i:i + chunk_size]) for i in range(0, len(indices), chunk_size)]
    stats: list[RealisationStats] = []
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for part in pool.map(_ensemble_chunk, [(spec, c) for c in chunks]):
            stats.extend(part)
    return stats


def run_ensemble(spec: ScenarioSpec, workers: int = 1,
                 bootstrap_resamples: int = 1000) -> RunMetrics:
    """Run all realisations of a scenario and aggregate them.

    Deterministic per spec; the result does not depend on ``workers``.
    """
    stats = ensemble_stats(spec, workers)
    return aggregate_stats(stats, spec.horizon, bootstrap_resamples)


# ---------------------------------------------------------------------------
# Two-dimensional shock sweep
# ---------------------------------------------------------------------------

DEFAULT_LAMBDA_INF_GRID = (1.0, 1.05, 1.10, 1.15, 1.20, 1.25, 1.30)
DEFAULT_LAMBDA_STR_GRID = (1.0, 1.25, 1.50, 1.75, 2.00, 2.25, 2.50)


@dataclass(frozen=True)
class SweepSpec:
    """Grid of shock multipliers swept over a base scenario template."""

    lambda_inf_grid: tuple[float, ...] = DEFAULT_LAMBDA_INF_GRID
    lambda_str_grid: tuple[float, ...] = DEFAULT_LAMBDA_STR_GRID
    base: ScenarioSpec = field(default_factory=ScenarioSpec)
    bootstrap_resamples: int = 1000

    def __post_init__(self) -> None:
        for name, grid in (("lambda_inf_grid", self.lambda_inf_grid),
                           ("lambda_str_grid", self.lambda_str_grid)):
            values = tuple(float(v) for v in grid)
            if not values:
                raise ValueError(f"{name} must be non-empty")
            if list(values) != sorted(values) or len(set(values)) != len(values):
                raise ValueError(f"{name} must be strictly ascending")
            if values[0] != 1.0:
                raise ValueError(f"{name} must start at 1.0 (amplification baseline)")
            object.__setattr__(self, name, values)
        if self.bootstrap_resamples < 1:
            raise ValueError("bootstrap_resamples must be >= 1")


def run_sweep(sweep: SweepSpec, workers: int = 1) -> SweepResult:
    """Simulate every grid point and compute the amplification surface.

    All grid points share the base scenario's seed sequence, so the
    amplification at (i, s) is a paired contrast against the axis cells.
    Bootstrap CIs resample realisation indices jointly across the four cells
    entering each amplification value.
    """
    base = sweep.base
    results: dict[tuple[float, float], RunMetrics] = {}
    for li in sweep.lambda_inf_grid:
        for ls in sweep.lambda_str_grid:
            spec = replace(base, id=f"sweep({li:g},{ls:g})",
                           shock=replace(base.shock, lambda_inf=li, lambda_str=ls))
            results[(li, ls)] = run_ensemble(spec, workers, sweep.bootstrap_resamples)

    r = base.n_realisations
    rng = np.random.default_rng(np.random.SeedSequence([base.base_seed, 2]))
    idx = rng.integers(0, r, size=(sweep.bootstrap_resamples, r)) if r > 1 else None

    cells: dict[tuple[float, float], SweepCell] = {}
    origin = np.asarray(results[(1.0, 1.0)].d_total_by_realisation)
    for li in sweep.lambda_inf_grid:
        row_base = np.asarray(results[(li, 1.0)].d_total_by_realisation)
        for ls in sweep.lambda_str_grid:
            col_base = np.asarray(results[(1.0, ls)].d_total_by_realisation)
            both = np.asarray(results[(li, ls)].d_total_by_realisation)
            a_point = amplification(float(both.mean()), float(row_base.mean()),
                                    float(col_base.mean()), float(origin.mean()))
            if idx is None:
                a_ci = (a_point, a_point)
            else:
                boots = ((both[idx].mean(axis=1) - row_base[idx].mean(axis=1))
                         - (col_base[idx].mean(axis=1) - origin[idx].mean(axis=1)))
                lo, hi = np.percentile(boots, [2.5, 97.5])
                a_ci = (float(lo), float(hi))
            m = results[(li, ls)]
            cells[(li, ls)] = SweepCell(
                lambda_inf=li, lambda_str=ls,
                d_total=m.d_total, d_early=m.d_early,
                amplification=a_point, amplification_ci=a_ci,
                d_total_by_realisation=m.d_total_by_realisation,
            )
    return SweepResult(
        lambda_inf_grid=sweep.lambda_inf_grid,
        lambda_str_grid=sweep.lambda_str_grid,
        cells=cells,
        base_seed=base.base_seed,
        n_realisations=base.n_realisations,
        n_agents=base.n_agents,
        spec_hash=spec_hash(sweep_to_dict(sweep)),
    )


# ---------------------------------------------------------------------------
# Sensitivity analysis
# ---------------------------------------------------------------------------

SENSITIVITY_OVERRIDES = ("rho_mean", "rho_sd", "tau_scale", "n_realisations", "shock_form")


@dataclass(frozen=True)
class QualitativeChecks:
    """Whether the headline mechanisms survive under a perturbed configuration."""

    amplification: float
    amplification_ci: tuple[float, float]
    amplification_positive: bool
    early_increase: float
    late_conditional_increase: float
    cycle_concentration_holds: bool
    lag_peak_semester: int | None
    lag_peak_in_window: bool  # peak at semester 3 or 4


@dataclass(frozen=True)
class OverrideResult:
    name: str
    value: float | str
    metrics: RunMetrics
    delta_d_total: float
    delta_d_early: float
    delta_d_late_conditional: float
    checks: QualitativeChecks | None


@dataclass(frozen=True)
class SensitivityReport:
    base_metrics: RunMetrics
    base_checks: QualitativeChecks | None
    results: tuple[OverrideResult, ...]


def _apply_override(spec: ScenarioSpec, name: str, value) -> ScenarioSpec:
    if name == "rho_mean":
        limit = 0.2 * abs(spec.population.rho_mean)
        if abs(float(value) - spec.population.rho_mean) > limit + 1e-12:
            raise ValueError(f"rho_mean override must stay within +-20% of {spec.population.rho_mean}")
        return replace(spec, population=replace(spec.population, rho_mean=float(value)))
    if name == "rho_sd":
        limit = 0.2 * abs(spec.population.rho_sd)
        if abs(float(value) - spec.population.rho_sd) > limit + 1e-12:
            raise ValueError(f"rho_sd override must stay within +-20% of {spec.population.rho_sd}")
        return replace(spec, population=replace(spec.population, rho_sd=float(value)))
    if name == "tau_scale":
        scale = float(value)
        if not 0.8 <= scale <= 1.2:
            raise ValueError("tau_scale must be in [0.8, 1.2]")
        return replace(spec, population=replace(
            spec.population,
            tau_mean=spec.population.tau_mean * scale,
            tau_sd=spec.population.tau_sd * scale,
        ))
    if name == "n_realisations":
        n = int(value)
        if n not in (100, 500):
            raise ValueError("n_realisations override must be 100 or 500")
        return replace(spec, n_realisations=n)
    if name == "shock_form":
        if value not in (LINEAR_CENTRED, PAPER_LITERAL):
            raise ValueError(f"shock_form must be one of {LINEAR_CENTRED!r}, {PAPER_LITERAL!r}")
        return replace(spec, shock=replace(spec.shock, shock_form=str(value)))
    raise ValueError(f"unknown sensitivity override {name!r}; "
                     f"supported: {', '.join(SENSITIVITY_OVERRIDES)}")


def _qualitative_checks(spec: ScenarioSpec, workers: int,
                        resamples: int = 1000) -> QualitativeChecks:
    """Probe amplification, cycle concentration and the endogenous lag."""
    def shocked(li: float, ls: float, schedule=None) -> ScenarioSpec:
        return replace(spec, shock=replace(spec.shock, lambda_inf=li, lambda_str=ls,
                                           strike_schedule=schedule))

    m_base = run_ensemble(shocked(1.0, 1.0), workers, resamples)
    m_inf = run_ensemble(shocked(1.2, 1.0), workers, resamples)
    m_str = run_ensemble(shocked(1.0, 2.0), workers, resamples)
    m_both = run_ensemble(shocked(1.2, 2.0), workers, resamples)
    m_pulse = run_ensemble(shocked(1.0, 1.0, {1: 2.5}), workers, resamples)

    arrays = [np.asarray(m.d_total_by_realisation) for m in (m_both, m_inf, m_str, m_base)]
    a_point = amplification(*(float(a.mean()) for a in arrays))
    r = spec.n_realisations
    if r > 1:
        rng = np.random.default_rng(np.random.SeedSequence([spec.base_seed, 3]))
        idx = rng.integers(0, r, size=(resamples, r))
        boots = ((arrays[0][idx].mean(axis=1) - arrays[1][idx].mean(axis=1))
                 - (arrays[2][idx].mean(axis=1) - arrays[3][idx].mean(axis=1)))
        lo, hi = np.percentile(boots, [2.5, 97.5])
        a_ci = (float(lo), float(hi))
    else:
        a_ci = (a_point, a_point)

    early_inc = m_str.d_early - m_base.d_early
    late_inc = m_str.d_late_conditional - m_base.d_late_conditional
    excess = hazard_excess(m_pulse.hazard_curve, m_base.hazard_curve)
    return QualitativeChecks(
        amplification=a_point,
        amplification_ci=a_ci,
        amplification_positive=a_point > 0.0,
        early_increase=early_inc,
        late_conditional_increase=late_inc,
        cycle_concentration_holds=early_inc > late_inc,
        lag_peak_semester=excess.peak_semester,
        lag_peak_in_window=excess.peak_semester in (3, 4),
    )


def sensitivity_run(spec: ScenarioSpec,
                    overrides: Mapping[str, object] | Sequence[tuple[str, object]],
                    workers: int = 1, check_properties: bool = True) -> SensitivityReport:
    """Rerun the ensemble once per override and compare against the base run.

    ``overrides`` is a mapping or an ordered sequence of (name, value) pairs
    (a name may repeat with different values, e.g. tau_scale at 0.8 and 1.2).
    Each override is applied in isolation.  With ``check_properties`` the
    report also re-derives the qualitative mechanism checks (amplification
    sign at (1.2, 2.0), early-versus-late cycle concentration, and the
    strike-pulse lag peak) under each perturbed configuration.
    """
    items = list(overrides.items()) if isinstance(overrides, Mapping) else list(overrides)
    for name, _ in items:
        if name not in SENSITIVITY_OVERRIDES:
            raise ValueError(f"unknown sensitivity override {name!r}; "
                             f"supported: {', '.join(SENSITIVITY_OVERRIDES)}")
    base_metrics = run_ensemble(spec, workers)
    base_checks = _qualitative_checks(spec, workers) if check_properties else None
    results = []
    for name, value in items:
        modified = _apply_override(spec, name, value)
        metrics = run_ensemble(modified, workers)
        checks = _qualitative_checks(modified, workers) if check_properties else None
        results.append(OverrideResult(
            name=name,
            value=value if isinstance(value, str) else float(value),
            metrics=metrics,
            delta_d_total=metrics.d_total - base_metrics.d_total,
            delta_d_early=metrics.d_early - base_metrics.d_early,
            delta_d_late_conditional=metrics.d_late_conditional - base_metrics.d_late_conditional,
            checks=checks,
        ))
    return SensitivityReport(base_metrics=base_metrics, base_checks=base_checks,
                             results=tuple(results))


# ---------------------------------------------------------------------------
# JSON (de)serialisation and hashing
# ---------------------------------------------------------------------------

def scenario_to_dict(spec: ScenarioSpec) -> dict:
    return {
        "id": spec.id,
        "shock": {
            "lambda_inf": spec.shock.lambda_inf,
            "lambda_str": spec.shock.lambda_str,
            "delta_inf_eff": spec.shock.delta_inf_eff,
            "alpha_str_eff": spec.shock.alpha_str_eff,
            "delta_inf_literal": spec.shock.delta_inf_literal,
            "alpha_str_literal": spec.shock.alpha_str_literal,
            "strike_schedule": (None if spec.shock.strike_schedule is None
                                else {str(k): v for k, v in sorted(spec.shock.strike_schedule.items())}),
            "shock_form": spec.shock.shock_form,
        },
        "interventions": {
            "academic_support_factor": spec.interventions.academic_support_factor,
            "curriculum_redesign_factor": spec.interventions.curriculum_redesign_factor,
            "financial_support_boost": spec.interventions.financial_support_boost,
        },
        "n_agents": spec.n_agents,
        "n_realisations": spec.n_realisations,
        "horizon": spec.horizon,
        "base_seed": spec.base_seed,
        "course_load": spec.course_load,
        "population": {
            "n_agents": spec.population.n_agents,
            "rho_mean": spec.population.rho_mean,
            "rho_sd": spec.population.rho_sd,
            "tau_mean": spec.population.tau_mean,
            "tau_sd": spec.population.tau_sd,
            "age_mean": spec.population.age_mean,
            "age_sd": spec.population.age_sd,
            "age_min": spec.population.age_min,
            "age_max": spec.population.age_max,
            "male_share": spec.population.male_share,
            "gpa_mean": spec.population.gpa_mean,
            "gpa_sd": spec.population.gpa_sd,
            "gpa_min": spec.population.gpa_min,
            "gpa_max": spec.population.gpa_max,
            "displaced_share": spec.population.displaced_share,
            "parental_mean": spec.population.parental_mean,
            "parental_sd": spec.population.parental_sd,
            "rank_correlation": (None if spec.population.rank_correlation is None
                                 else [list(row) for row in spec.population.rank_correlation]),
        },
        "coefficients": {
            "beta0": spec.coefficients.beta0,
            "beta1": spec.coefficients.beta1,
            "beta2": spec.coefficients.beta2,
            "beta3": spec.coefficients.beta3,
            "beta4": spec.coefficients.beta4,
        },
        "dynamics": {
            "d_fail": spec.dynamics.d_fail,
            "r_gain": spec.dynamics.r_gain,
            "rho_floor": spec.dynamics.rho_floor,
            "external_hazard_base": spec.dynamics.external_hazard_base,
        },
        "curriculum": None if spec.curriculum is None else curriculum_to_dict(spec.curriculum),
    }


def _section(doc: Mapping, key: str, path: str) -> Mapping:
    value = doc.get(key, {})
    if not isinstance(value, Mapping):
        raise ValueError(f"{path}.{key}: expected an object")
    return value


def _build(cls, section: Mapping, path: str, converters: Mapping[str, type] | None = None):
    kwargs = {}
    fields = {f.name for f in cls.__dataclass_fields__.values()} if hasattr(cls, "__dataclass_fields__") else set()
    for key, value in section.items():
        if key not in fields:
            raise ValueError(f"{path}.{key}: unknown field")
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{path}: {exc}") from None


def scenario_from_dict(doc: Mapping, path: str = "scenario") -> ScenarioSpec:
    """Build a ScenarioSpec from its JSON form; errors carry field paths."""
    if not isinstance(doc, Mapping):
        raise ValueError(f"{path}: expected an object")
    known = {"id", "shock", "interventions", "n_agents", "n_realisations", "horizon",
             "base_seed", "course_load", "population", "coefficients", "dynamics",
             "curriculum"}
    for key in doc:
        if key not in known:
            raise ValueError(f"{path}.{key}: unknown field")

    shock_doc = dict(_section(doc, "shock", path))
    if shock_doc.get("strike_schedule") is not None:
        try:
            shock_doc["strike_schedule"] = {int(k): float(v)
                                            for k, v in shock_doc["strike_schedule"].items()}
        except (TypeError, ValueError, AttributeError):
            raise ValueError(f"{path}.shock.strike_schedule: expected semester -> multiplier map") from None
    shock = _build(ShockConfig, shock_doc, f"{path}.shock")
    interventions = _build(InterventionModifiers, _section(doc, "interventions", path),
                           f"{path}.interventions")
    pop_doc = dict(_section(doc, "population", path))
    if pop_doc.get("rank_correlation") is not None:
        pop_doc["rank_correlation"] = tuple(tuple(float(x) for x in row)
                                            for row in pop_doc["rank_correlation"])
    population = _build(PopulationParams, pop_doc, f"{path}.population")
    coefficients = _build(DecisionCoefficients, _section(doc, "coefficients", path),
                          f"{path}.coefficients")
    dynamics = _build(ResilienceDynamics, _section(doc, "dynamics", path), f"{path}.dynamics")

    curriculum = None
    if doc.get("curriculum") is not None:
        curriculum, _ = curriculum_from_dict(doc["curriculum"], path=f"{path}.curriculum")

    top = {}
    for key in ("id", "n_agents", "n_realisations", "horizon", "base_seed", "course_load"):
        if key in doc:
            top[key] = doc[key]
    try:
        return ScenarioSpec(shock=shock, interventions=interventions, population=population,
                            coefficients=coefficients, dynamics=dynamics,
                            curriculum=curriculum, **top)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{path}: {exc}") from None


def sweep_to_dict(sweep: SweepSpec) -> dict:
    return {
        "lambda_inf_grid": list(sweep.lambda_inf_grid),
        "lambda_str_grid": list(sweep.lambda_str_grid),
        "bootstrap_resamples": sweep.bootstrap_resamples,
        "base": scenario_to_dict(sweep.base),
    }


def sweep_from_dict(doc: Mapping, path: str = "sweep") -> SweepSpec:
    if not isinstance(doc, Mapping):
        raise ValueError(f"{path}: expected an object")
    for key in doc:
        if key not in {"lambda_inf_grid", "lambda_str_grid", "bootstrap_resamples", "base"}:
            raise ValueError(f"{path}.{key}: unknown field")
    base = scenario_from_dict(doc.get("base", {}), f"{path}.base") if "base" in doc else ScenarioSpec()
    kwargs = {}
    for key in ("lambda_inf_grid", "lambda_str_grid"):
        if key in doc:
            try:
                kwargs[key] = tuple(float(v) for v in doc[key])
            except (TypeError, ValueError):
                raise ValueError(f"{path}.{key}: expected an array of numbers") from None
    if "bootstrap_resamples" in doc:
        kwargs["bootstrap_resamples"] = int(doc["bootstrap_resamples"])
    try:
        return SweepSpec(base=base, **kwargs)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None


def spec_hash(snapshot: Mapping) -> str:
    """Stable sha256 of a canonical JSON rendering of a spec snapshot."""
    canonical = json.dumps(snapshot, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
