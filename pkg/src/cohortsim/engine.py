"""Semester-by-semester trajectory engine.

Each simulated semester runs, per active agent: enrollment in up to
``course_load`` prerequisite-eligible courses (unresolved failures retried
first, then lowest scheduled semester first), stochastic pass/fail under
strike-amplified friction, a grade/GPA update, a resilience update under
inflation depletion, an external-circumstance hazard, and finally the
continuation decision (exit when the continuation probability falls below the
agent's threshold).

Two shock mechanisms modify the baseline:

* inflation: a multiplier ``lambda_inf`` that scales down resilience each
  semester (a chronic, distal stressor);
* strikes: a multiplier ``lambda_str`` that inflates failure probabilities in
  basic-cycle courses only (an acute, proximal stressor).

Both default to the centred-linear form, which is neutral at lambda = 1 and
matches the calibrated anchors (lambda_inf = 1.2 gives 6% extra depletion per
semester, lambda_str = 2 gives +50% basic-cycle friction).  The alternative
``paper-literal`` form (1 + 0.25 * lambda_str and 1 - 0.03 * lambda_inf,
which is not neutral at lambda = 1) is kept for sensitivity analysis.

Randomness is drawn in fixed-size batches per semester -- ``course_load``
uniforms, ``course_load`` grade deviates and one hazard uniform per agent,
whether or not the agent uses them -- so a realisation's stream never depends
on outcomes, worker scheduling, or shock intensity.  That makes runs
bit-reproducible and gives common random numbers across scenario variants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import TYPE_CHECKING, Mapping, Sequence

import numpy as np

from .curriculum import (
    Course, CurriculumGraph, Cycle, apply_curriculum_redesign, default_curriculum,
)
from .population import AgentState, DropoutCause, Status, generate_cohort

if TYPE_CHECKING:
    from .scenario import ScenarioSpec

LINEAR_CENTRED = "linear-centred"
PAPER_LITERAL = "paper-literal"

#: Hard ceiling on any per-attempt failure probability, so extreme sweeps
#: never create absorbing-state courses.
MAX_FAIL_PROBABILITY = 0.95

DEFAULT_COURSE_LOAD = 5


@dataclass(frozen=True)
class ShockConfig:
    """Macro-shock intensities and their effect slopes.

    ``strike_schedule`` optionally overrides the strike multiplier for
    specific semesters (e.g. ``{1: 2.5}`` for a single-semester pulse);
    semesters not listed fall back to ``lambda_str``.
    """

    lambda_inf: float = 1.0
    lambda_str: float = 1.0
    delta_inf_eff: float = 0.3  # resilience depletion per unit of (lambda_inf - 1)
    alpha_str_eff: float = 0.5  # friction gain per unit of (lambda_str - 1)
    delta_inf_literal: float = 0.03  # literal-form depletion coefficient
    alpha_str_literal: float = 0.25  # literal-form friction coefficient
    strike_schedule: Mapping[int, float] | None = None
    shock_form: str = LINEAR_CENTRED

    def __post_init__(self) -> None:
        if self.lambda_inf < 1.0 or self.lambda_str < 1.0:
            raise ValueError("shock multipliers must be >= 1")
        if min(self.delta_inf_eff, self.alpha_str_eff,
               self.delta_inf_literal, self.alpha_str_literal) < 0.0:
            raise ValueError("shock slopes must be >= 0")
        if self.shock_form not in (LINEAR_CENTRED, PAPER_LITERAL):
            raise ValueError(f"unknown shock_form {self.shock_form!r}")
        if self.strike_schedule is not None:
            sched = {int(k): float(v) for k, v in self.strike_schedule.items()}
            if any(k < 1 for k in sched):
                raise ValueError("strike_schedule semesters must be >= 1")
            if any(v < 1.0 for v in sched.values()):
                raise ValueError("strike_schedule multipliers must be >= 1")
            object.__setattr__(self, "strike_schedule", sched)


@dataclass(frozen=True)
class DecisionCoefficients:
    """Continuation logistic: sigma(b0 + b1*GPA/10 + b2*progress + b3*rho + b4*failures).

    GPA enters normalised to [0, 1]; progress is the fraction of the
    curriculum passed; failures is the cumulative failed-attempt count.
    Defaults are the calibrated values.
    """

    beta0: float = -2.0
    beta1: float = 2.0  # GPA
    beta2: float = 1.5  # progress
    beta3: float = 2.0  # resilience
    beta4: float = -0.15  # cumulative failures

    def __post_init__(self) -> None:
        if min(self.beta1, self.beta2, self.beta3) < 0.0:
            raise ValueError("beta1, beta2, beta3 must be >= 0")
        if self.beta4 > 0.0:
            raise ValueError("beta4 must be <= 0")


@dataclass(frozen=True)
class ResilienceDynamics:
    """Resilience depletion/recovery rates and the external-circumstance hazard."""

    d_fail: float = 0.08  # depletion per failed course
    r_gain: float = 0.05  # recovery fraction per clean semester
    rho_floor: float = 0.10  # exhaustion threshold for cause attribution
    external_hazard_base: float = 0.01  # per-semester baseline hazard

    def __post_init__(self) -> None:
        for name in ("d_fail", "r_gain", "rho_floor", "external_hazard_base"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")


@dataclass(frozen=True)
class InterventionModifiers:
    """Policy levers: tutoring, curriculum redesign, targeted bursaries.

    The academic-support factor scales all failure probabilities; the redesign
    factor scales basic-cycle failure rates and friction; the financial boost
    adds resilience each semester for agents with parental education <= 2.
    All-neutral (1, 1, 0) is the no-intervention baseline.
    """

    academic_support_factor: float = 1.0
    curriculum_redesign_factor: float = 1.0
    financial_support_boost: float = 0.0

    def __post_init__(self) -> None:
        for name in ("academic_support_factor", "curriculum_redesign_factor"):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in (0, 1]")
        if not 0.0 <= self.financial_support_boost <= 0.2:
            raise ValueError("financial_support_boost must be in [0, 0.2]")

    @property
    def is_neutral(self) -> bool:
        return (self.academic_support_factor == 1.0
                and self.curriculum_redesign_factor == 1.0
                and self.financial_support_boost == 0.0)


@dataclass(frozen=True)
class CourseOutcome:
    passed: bool
    grade: float | None = None


@dataclass(frozen=True)
class SemesterLog:
    """Per-semester agent rows: (agent id, status, gpa, rho, attempted, failed)."""

    semester: int
    rows: tuple[tuple, ...]


@dataclass(frozen=True)
class TrajectoryLog:
    """Full record of one realisation: terminal agents plus optional rows."""

    realisation_index: int
    cohort_seed: int
    horizon: int
    n_courses: int
    agents: tuple[AgentState, ...]
    semesters: tuple[SemesterLog, ...] = ()


def _sigmoid(x: float) -> float:
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def strike_friction_multiplier(config: ShockConfig, course: Course, semester: int) -> float:
    """Failure-probability multiplier for one course in one semester.

    Strikes disrupt the foundational cycle only: advanced-cycle courses always
    return 1.0.  The semester's multiplier comes from ``strike_schedule`` when
    present, else ``lambda_str``.
    """
    if course.cycle is not Cycle.BASIC:
        return 1.0
    lam = config.lambda_str
    if config.strike_schedule is not None:
        lam = config.strike_schedule.get(semester, lam)
    if config.shock_form == PAPER_LITERAL:
        return 1.0 + config.alpha_str_literal * lam
    return 1.0 + config.alpha_str_eff * (lam - 1.0)


def inflation_depletion_factor(config: ShockConfig) -> float:
    """Multiplicative per-semester resilience factor; 1.0 when lambda_inf is 1."""
    if config.shock_form == PAPER_LITERAL:
        factor = 1.0 - config.delta_inf_literal * config.lambda_inf
    else:
        factor = 1.0 - config.delta_inf_eff * (config.lambda_inf - 1.0)
    return min(1.0, max(0.0, factor))


def fail_probability(course: Course, config: ShockConfig, modifiers: InterventionModifiers,
                     semester: int) -> float:
    """Effective per-attempt failure probability, capped at 0.95."""
    p = (course.base_fail_rate
         * strike_friction_multiplier(config, course, semester)
         * modifiers.academic_support_factor)
    return min(MAX_FAIL_PROBABILITY, max(0.0, p))


def attempt_course(agent: AgentState, course: Course, config: ShockConfig,
                   modifiers: InterventionModifiers, rng: np.random.Generator | None = None,
                   *, u: float | None = None, grade_z: float | None = None,
                   p: float | None = None, check: bool = True) -> CourseOutcome:
    """Attempt one course, updating the agent's academic record in place.

    On a pass the grade is N(4 + 0.6 * secondary GPA, 1) clipped to [4, 10];
    a failure is graded 2.  GPA is the running mean over all attempts.
    ``u``/``grade_z``/``p`` allow the engine to supply pre-drawn randomness
    and a pre-computed failure probability; otherwise they come from ``rng``.
    """
    if check:
        if agent.status is not Status.ACTIVE:
            raise ValueError(f"agent {agent.id} is not active")
        if not course.prerequisites <= agent.passed:
            missing = sorted(course.prerequisites - agent.passed)
            raise ValueError(
                f"agent {agent.id} attempted {course.id!r} without prerequisites {missing}")
    if p is None:
        p = fail_probability(course, config, modifiers, agent.semester)
    if u is None:
        u = float(rng.random())
    agent.graded_attempts += 1
    if u < p:
        agent.failed_attempts[course.id] = agent.failed_attempts.get(course.id, 0) + 1
        agent.grade_points += 2.0
        agent.gpa = agent.grade_points / agent.graded_attempts
        return CourseOutcome(False)
    if grade_z is None:
        grade_z = float(rng.standard_normal())
    grade = 4.0 + 0.6 * agent.profile.secondary_gpa + grade_z
    grade = min(10.0, max(4.0, grade))
    agent.passed.add(course.id)
    agent.grade_points += grade
    agent.gpa = agent.grade_points / agent.graded_attempts
    return CourseOutcome(True, grade)


def continuation_probability(agent: AgentState, graph: CurriculumGraph,
                             coeffs: DecisionCoefficients) -> float:
    """Probability the agent continues next semester, in (0, 1)."""
    progress = len(agent.passed) / len(graph)
    x = (coeffs.beta0
         + coeffs.beta1 * agent.gpa / 10.0
         + coeffs.beta2 * progress
         + coeffs.beta3 * agent.resilience
         + coeffs.beta4 * agent.total_failures)
    return _sigmoid(x)


def enroll(agent: AgentState, graph: CurriculumGraph, course_load: int = DEFAULT_COURSE_LOAD) -> list[Course]:
    """Courses the agent takes this semester.

    Unresolved failures are retried first (they were eligible when first
    attempted, and eligibility never regresses), then fresh prerequisite-
    eligible courses in (scheduled semester, id) order, up to ``course_load``.
    """
    passed = agent.passed
    picks: list[Course] = []
    pending = [cid for cid in agent.failed_attempts if cid not in passed]
    if pending:
        courses = sorted((graph.course(cid) for cid in pending),
                         key=lambda c: (c.scheduled_semester, c.id))
        picks.extend(courses[:course_load])
    if len(picks) < course_load:
        pending_set = set(pending)
        for course in graph.courses:
            if course.id in passed or course.id in pending_set:
                continue
            if course.prerequisites <= passed:
                picks.append(course)
                if len(picks) == course_load:
                    break
    return picks


def step_semester(agents: Sequence[AgentState], graph: CurriculumGraph, config: ShockConfig,
                  modifiers: InterventionModifiers, dynamics: ResilienceDynamics,
                  coeffs: DecisionCoefficients, rng: np.random.Generator, semester: int,
                  course_load: int = DEFAULT_COURSE_LOAD, record: bool = False) -> SemesterLog:
    """Advance every active agent through one semester, in place.

    End-of-semester evaluation order: graduation, then the external-
    circumstance hazard, then the threshold decision on the continuation
    probability.  Dropout causes follow the precedence external >
    resilience-depletion > academic.
    """
    n = len(agents)
    u_rows = rng.random((n, course_load)).tolist()
    z_rows = rng.standard_normal((n, course_load)).tolist()
    hazard_draws = rng.random(n).tolist()

    infl_factor = inflation_depletion_factor(config)
    any_basic = any(c.cycle is Cycle.BASIC for c in graph.courses)
    basic_mult = (strike_friction_multiplier(config, next(c for c in graph.courses if c.cycle is Cycle.BASIC),
                                             semester) if any_basic else 1.0)
    support = modifiers.academic_support_factor
    boost = modifiers.financial_support_boost
    n_courses = len(graph)
    base_hazard = dynamics.external_hazard_base

    rows: list[tuple] = []
    for i, agent in enumerate(agents):
        if agent.status is not Status.ACTIVE:
            continue
        agent.semester = semester
        u_row = u_rows[i]
        z_row = z_rows[i]

        enrolled = enroll(agent, graph, course_load)
        failed_now: list[str] = []
        for j, course in enumerate(enrolled):
            mult = basic_mult if course.cycle is Cycle.BASIC else 1.0
            p = course.base_fail_rate * mult * support
            if p > MAX_FAIL_PROBABILITY:
                p = MAX_FAIL_PROBABILITY
            outcome = attempt_course(agent, course, config, modifiers,
                                     u=u_row[j], grade_z=z_row[j], p=p, check=False)
            if not outcome.passed:
                failed_now.append(course.id)

        rho = agent.resilience * infl_factor - dynamics.d_fail * len(failed_now)
        if not failed_now:
            rho += dynamics.r_gain * (1.0 - rho)
        if boost > 0.0 and agent.profile.parental_education <= 2:
            rho += boost
        agent.resilience = min(1.0, max(0.0, rho))

        if len(agent.passed) == n_courses:
            agent.mark_graduated(semester)
        else:
            eps = base_hazard * (6 - agent.profile.parental_education) / 3.0
            if hazard_draws[i] < eps:
                agent.mark_dropout(DropoutCause.EXTERNAL, semester)
            else:
                prob = continuation_probability(agent, graph, coeffs)
                if prob < agent.threshold:
                    cause = (DropoutCause.RESILIENCE_DEPLETION
                             if agent.resilience < dynamics.rho_floor
                             else DropoutCause.ACADEMIC)
                    agent.mark_dropout(cause, semester)

        if record:
            rows.append((agent.id, semester, agent.status.value, agent.gpa, agent.resilience,
                         tuple(c.id for c in enrolled), tuple(failed_now)))
    return SemesterLog(semester, tuple(rows))


@lru_cache(maxsize=4)
def _cached_default_curriculum() -> CurriculumGraph:
    return default_curriculum()


def effective_graph(scenario: "ScenarioSpec") -> CurriculumGraph:
    """Scenario curriculum (default when unset) with any redesign applied."""
    graph = scenario.curriculum if scenario.curriculum is not None else _cached_default_curriculum()
    factor = scenario.interventions.curriculum_redesign_factor
    if factor < 1.0:
        graph = apply_curriculum_redesign(graph, factor)
    return graph


def run_realisation(scenario: "ScenarioSpec", realisation_index: int,
                    prepared_graph: CurriculumGraph | None = None,
                    record_rows: bool = True) -> TrajectoryLog:
    """Run one stochastic realisation of a scenario.

    The cohort seed is ``base_seed XOR realisation_index``; the engine stream
    is derived from the same entropy, so results are deterministic per
    (scenario, index) and independent across indices.  ``prepared_graph``
    lets ensemble runners pass a pre-built effective graph (redesign already
    applied); when omitted it is derived from the scenario.
    """
    if realisation_index < 0:
        raise ValueError("realisation_index must be >= 0")
    graph = prepared_graph if prepared_graph is not None else effective_graph(scenario)
    seed = scenario.base_seed ^ realisation_index
    population = scenario.population
    if population.n_agents != scenario.n_agents:
        from dataclasses import replace
        population = replace(population, n_agents=scenario.n_agents)
    agents = generate_cohort(population, seed)
    engine_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))

    logs: list[SemesterLog] = []
    for t in range(1, scenario.horizon + 1):
        log = step_semester(agents, graph, scenario.shock, scenario.interventions,
                            scenario.dynamics, scenario.coefficients, engine_rng, t,
                            scenario.course_load, record=record_rows)
        if record_rows:
            logs.append(log)
        if not any(a.status is Status.ACTIVE for a in agents):
            break
    return TrajectoryLog(
        realisation_index=realisation_index,
        cohort_seed=seed,
        horizon=scenario.horizon,
        n_courses=len(graph),
        agents=tuple(agents),
        semesters=tuple(logs),
    )


TRAJECTORY_HEADER = ("realisation", "agent_id", "semester", "status", "gpa",
                     "resilience", "courses_attempted", "courses_failed")


def trajectory_csv_rows(log: TrajectoryLog) -> list[tuple]:
    """Flatten a trajectory log to one row per agent-semester."""
    out = []
    for sem in log.semesters:
        for agent_id, semester, status, gpa, rho, attempted, failed in sem.rows:
            out.append((log.realisation_index, agent_id, semester, status, gpa, rho,
                        ";".join(attempted), ";".join(failed)))
    return out
