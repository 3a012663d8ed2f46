import math

import pytest
from hypothesis import given, strategies as st

from cohortsim.curriculum import Course, CurriculumGraph, Cycle
from cohortsim.engine import run_realisation
from cohortsim.featurelab import (
    FeatureError, MacroSeries, StudentRecord, annualised_inflation,
    build_feature_view, cumulative_inflation, default_feature_catalog,
    ifc_weighted_strike_index, inflation_volatility_24m, load_macro_series,
    load_student_records, make_cohort_folds, strike_lag, student_records_from_log,
)
from cohortsim.scenario import ScenarioSpec


def series(inflation=(), first_month=0, strikes=(), first_semester=1):
    return MacroSeries(monthly_inflation=tuple(inflation), first_month=first_month,
                       strike_intensity=tuple(strikes), first_semester=first_semester)


def mini_graph():
    return CurriculumGraph([
        Course(id="b1", name="b1", cycle=Cycle.BASIC, scheduled_semester=1, ifc=0.8),
        Course(id="b2", name="b2", cycle=Cycle.BASIC, scheduled_semester=1, ifc=0.4),
        Course(id="adv", name="adv", cycle=Cycle.ADVANCED, scheduled_semester=5, ifc=0.9),
    ])


class TestInflationVolatility:
    def test_constant_series_has_zero_volatility(self):
        s = series(inflation=[2.0] * 24, first_month=0)
        assert inflation_volatility_24m(s, 24) == 0.0

    def test_alternating_series(self):
        s = series(inflation=[1.0, 3.0] * 12, first_month=0)
        # sample SD with n-1 denominator: sqrt(24 / 23)
        assert inflation_volatility_24m(s, 24) == pytest.approx(math.sqrt(24 / 23), abs=1e-12)

    def test_insufficient_history_is_an_error(self):
        s = series(inflation=[1.0] * 23, first_month=1)
        with pytest.raises(FeatureError):
            inflation_volatility_24m(s, 24)


class TestStrikeLag:
    def test_worked_example(self):
        s = series(strikes=[0.0, 0.1, 0.3], first_semester=1)
        assert strike_lag(s, semester=3, lag=2) == pytest.approx(0.1, abs=1e-12)

    def test_lag_one_is_most_recent(self):
        s = series(strikes=[0.0, 0.1, 0.3], first_semester=1)
        assert strike_lag(s, semester=3, lag=1) == pytest.approx(0.3)
        assert strike_lag(s, semester=3, lag=3) == pytest.approx(0.0)

    def test_lag_zero_disallowed(self):
        s = series(strikes=[0.1], first_semester=1)
        with pytest.raises(FeatureError):
            strike_lag(s, semester=1, lag=0)

    def test_all_zero_series(self):
        s = series(strikes=[0.0] * 6, first_semester=1)
        for t in range(3, 7):
            for k in (1, 2, 3):
                assert strike_lag(s, t, k) == 0.0

    def test_reaching_before_coverage_is_an_error(self):
        s = series(strikes=[0.1, 0.2], first_semester=3)
        with pytest.raises(FeatureError):
            strike_lag(s, semester=3, lag=2)


class TestIfcWeightedStrikeIndex:
    def test_no_strikes(self):
        s = series(strikes=[0.0, 0.0], first_semester=1)
        assert ifc_weighted_strike_index([("b1", 1)], mini_graph(), s) == 0.0

    def test_single_taking(self):
        s = series(strikes=[0.2], first_semester=1)
        value = ifc_weighted_strike_index([("b1", 1)], mini_graph(), s)
        assert value == pytest.approx(0.16, abs=1e-12)

    def test_retakes_contribute_per_taking(self):
        s = series(strikes=[0.1, 0.3], first_semester=1)
        value = ifc_weighted_strike_index([("b1", 1), ("b1", 2)], mini_graph(), s)
        assert value == pytest.approx(0.8 * 0.1 + 0.8 * 0.3, abs=1e-12)

    def test_advanced_cycle_excluded(self):
        s = series(strikes=[0.5] * 6, first_semester=1)
        assert ifc_weighted_strike_index([("adv", 5)], mini_graph(), s) == 0.0

    def test_missing_ifc_is_an_error(self):
        graph = CurriculumGraph([Course(id="raw", name="raw", cycle=Cycle.BASIC,
                                        scheduled_semester=1)])
        s = series(strikes=[0.1], first_semester=1)
        with pytest.raises(FeatureError, match="IFC"):
            ifc_weighted_strike_index([("raw", 1)], graph, s)

    @given(st.lists(st.tuples(st.sampled_from(["b1", "b2"]), st.integers(1, 4)), max_size=8),
           st.lists(st.tuples(st.sampled_from(["b1", "b2"]), st.integers(1, 4)), max_size=8))
    def test_additive_over_disjoint_segments(self, first, second):
        s = series(strikes=[0.1, 0.2, 0.3, 0.05], first_semester=1)
        g = mini_graph()
        combined = ifc_weighted_strike_index(list(first) + list(second), g, s)
        split = (ifc_weighted_strike_index(first, g, s)
                 + ifc_weighted_strike_index(second, g, s))
        assert combined == pytest.approx(split, abs=1e-9)


class TestInflationAggregates:
    def test_annualised_compounding(self):
        s = series(inflation=[1.0] * 12, first_month=0)
        expected = (1.01 ** 12 - 1.0) * 100.0
        assert annualised_inflation(s, 12) == pytest.approx(expected, abs=1e-12)

    def test_cumulative_compounding(self):
        s = series(inflation=[2.0, 3.0], first_month=0)
        expected = (1.02 * 1.03 - 1.0) * 100.0
        assert cumulative_inflation(s, 0, 2) == pytest.approx(expected, abs=1e-12)


def full_series():
    # 24 months of history before entry at month 24, plus 6 semesters of follow-up
    inflation = [2.0 + 0.1 * (m % 5) for m in range(24 + 40)]
    strikes = [0.0, 0.10, 0.30, 0.05, 0.0, 0.2]
    return series(inflation=inflation, first_month=0, strikes=strikes, first_semester=1)


def student(takings=()):
    return StudentRecord(student_id="s1", entry_month=24, entry_semester=1,
                         takings=tuple(takings))


class TestBuildFeatureView:
    def test_entry_view_has_only_entry_features(self):
        catalog = default_feature_catalog()
        matrix = build_feature_view(catalog, [student()], 0, full_series(), mini_graph())
        assert set(matrix.columns) == {"MACRO_inflacion_entrada",
                                       "MACRO_inflacion_volatilidad_24m"}

    def test_lag_two_available_at_t2_but_not_lag_three(self):
        catalog = default_feature_catalog()
        matrix = build_feature_view(catalog, [student()], 2, full_series(), mini_graph())
        assert "MACRO_paros_lag_sem_2" in matrix.columns
        assert "MACRO_paros_lag_sem_3" not in matrix.columns

    def test_all_lags_present_at_t3(self):
        catalog = default_feature_catalog()
        matrix = build_feature_view(catalog, [student()], 3, full_series(), mini_graph())
        for lag in (1, 2, 3):
            assert f"MACRO_paros_lag_sem_{lag}" in matrix.columns

    def test_structural_absence_over_catalog_grid(self):
        # leakage property: exhaustive over catalog x prediction-time grid
        catalog = default_feature_catalog()
        for t in range(0, 5):
            matrix = build_feature_view(catalog, [student()], t, full_series(), mini_graph())
            expected = {f.name for f in catalog.features if f.available_from <= t}
            assert set(matrix.columns) == expected
            for f in catalog.features:
                assert matrix.availability[f.name] == (f.available_from <= t)

    def test_lag_values_align_with_series(self):
        catalog = default_feature_catalog()
        matrix = build_feature_view(catalog, [student()], 3, full_series(), mini_graph())
        row = dict(zip(matrix.columns, matrix.rows[0]))
        # observed semesters 1..3 have intensities 0.0, 0.10, 0.30
        assert row["MACRO_paros_lag_sem_1"] == pytest.approx(0.30)
        assert row["MACRO_paros_lag_sem_2"] == pytest.approx(0.10)
        assert row["MACRO_paros_lag_sem_3"] == pytest.approx(0.0)
        assert row["MACRO_paros_acum_ciclo"] == pytest.approx(0.40)

    def test_interaction_is_volatility_times_cumulative_exposure(self):
        catalog = default_feature_catalog()
        s = full_series()
        matrix = build_feature_view(catalog, [student()], 2, s, mini_graph())
        row = dict(zip(matrix.columns, matrix.rows[0]))
        expected = inflation_volatility_24m(s, 24) * (0.0 + 0.10)
        assert row["MACRO_inflacion_x_paros"] == pytest.approx(expected, abs=1e-12)

    def test_ifc_index_counts_only_observed_takings(self):
        catalog = default_feature_catalog()
        s = full_series()
        record = student(takings=[("b1", 1), ("b1", 2), ("b1", 4)])
        matrix = build_feature_view(catalog, [record], 2, s, mini_graph())
        row = dict(zip(matrix.columns, matrix.rows[0]))
        # the semester-4 taking lies beyond prediction time t=2
        assert row["MACRO_IFC_pond_paros_basico"] == pytest.approx(
            0.8 * 0.0 + 0.8 * 0.10, abs=1e-12)

    def test_basico_vs_superior_split(self):
        catalog = default_feature_catalog()
        s = full_series()
        matrix = build_feature_view(catalog, [student()], 6, s, mini_graph())
        row = dict(zip(matrix.columns, matrix.rows[0]))
        basic_mean = (0.0 + 0.10 + 0.30 + 0.05) / 4
        advanced_mean = (0.0 + 0.2) / 2
        assert row["MACRO_paros_basico_vs_superior"] == pytest.approx(
            basic_mean - advanced_mean, abs=1e-12)

    def test_catalog_has_each_macro_feature_once(self):
        names = default_feature_catalog().names()
        assert len(names) == 11
        assert len(set(names)) == 11


class TestCohortFolds:
    def test_first_fold(self):
        folds = make_cohort_folds(range(2004, 2020))
        assert folds[0].train_years == tuple(range(2004, 2011))
        assert folds[0].test_years == (2011, 2012)

    def test_last_fold(self):
        folds = make_cohort_folds(range(2004, 2020))
        assert folds[4].train_years == tuple(range(2004, 2019))
        assert folds[4].test_years == (2019,)

    def test_temporal_ordering_and_disjointness(self):
        for fold in make_cohort_folds(range(2004, 2020)):
            assert max(fold.train_years) < min(fold.test_years)
            assert not set(fold.train_years) & set(fold.test_years)

    def test_missing_years_rejected(self):
        with pytest.raises(FeatureError, match="missing"):
            make_cohort_folds(range(2005, 2020))

    def test_unexpected_years_rejected(self):
        with pytest.raises(FeatureError, match="outside"):
            make_cohort_folds(range(2004, 2021))


class TestAdaptersAndIo:
    def test_records_from_simulated_log(self):
        spec = ScenarioSpec(n_agents=5, n_realisations=1, horizon=2)
        log = run_realisation(spec, 0, record_rows=True)
        records = student_records_from_log(log, entry_month=24, entry_semester=7)
        assert len(records) == 5
        for record in records:
            for course_id, semester in record.takings:
                assert semester in (7, 8)

    def test_records_require_recorded_rows(self):
        spec = ScenarioSpec(n_agents=2, n_realisations=1, horizon=1)
        log = run_realisation(spec, 0, record_rows=False)
        with pytest.raises(FeatureError):
            student_records_from_log(log, 24, 1)

    def test_csv_round_trip(self, tmp_path):
        inflation = tmp_path / "inflation.csv"
        inflation.write_text("month,inflation\n" + "\n".join(
            f"{m},{1.5 + 0.1 * (m % 3)}" for m in range(30)) + "\n")
        strikes = tmp_path / "strikes.csv"
        strikes.write_text("semester,strike_intensity\n1,0.0\n2,0.15\n3,0.05\n")
        students = tmp_path / "students.csv"
        students.write_text("student_id,entry_month,entry_semester\nst1,24,1\n")
        takings = tmp_path / "takings.csv"
        takings.write_text("student_id,course_id,semester\nst1,b1,1\nst1,b1,2\n")
        series = load_macro_series(inflation, strikes)
        records = load_student_records(students, takings)
        assert series.strike_at(2) == 0.15
        assert records[0].takings == (("b1", 1), ("b1", 2))

    def test_gappy_series_rejected(self, tmp_path):
        inflation = tmp_path / "inflation.csv"
        inflation.write_text("month,inflation\n0,1.0\n2,1.0\n")
        strikes = tmp_path / "strikes.csv"
        strikes.write_text("semester,strike_intensity\n1,0.0\n")
        with pytest.raises(FeatureError, match="contiguous"):
            load_macro_series(inflation, strikes)

    def test_intensity_bounds_enforced(self):
        with pytest.raises(FeatureError):
            series(strikes=[1.4], first_semester=1)
