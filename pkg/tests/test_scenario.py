import pytest

from cohortsim.engine import ShockConfig, PAPER_LITERAL
from cohortsim.metrics import sweep_csv_rows
from cohortsim.scenario import (
    ScenarioSpec, SweepSpec, builtin_scenario, run_ensemble, run_sweep,
    scenario_from_dict, scenario_to_dict, sensitivity_run, spec_hash,
    sweep_from_dict, sweep_to_dict,
)


def tiny_spec(**kw):
    defaults = dict(n_agents=40, n_realisations=6, horizon=6, base_seed=7)
    defaults.update(kw)
    return ScenarioSpec(**defaults)


class TestBuiltinScenarios:
    def test_combined_crisis_shocks(self):
        spec = builtin_scenario("S7")
        assert spec.shock.lambda_inf == 1.2
        assert spec.shock.lambda_str == 2.0
        assert spec.interventions.is_neutral

    def test_baseline_is_all_neutral(self):
        spec = builtin_scenario("S0")
        assert spec.shock.lambda_inf == 1.0 and spec.shock.lambda_str == 1.0
        assert spec.interventions.is_neutral
        assert spec.n_agents == 300 and spec.n_realisations == 100 and spec.horizon == 12

    def test_intervention_scenarios_carry_calibrated_modifiers(self):
        s1, s2, s3, s4 = (builtin_scenario(i) for i in ("S1", "S2", "S3", "S4"))
        assert s1.interventions.academic_support_factor < 1.0
        assert s2.interventions.curriculum_redesign_factor < 1.0
        assert s3.interventions.financial_support_boost > 0.0
        assert s4.interventions == type(s4.interventions)(
            academic_support_factor=s1.interventions.academic_support_factor,
            curriculum_redesign_factor=s2.interventions.curriculum_redesign_factor,
            financial_support_boost=s3.interventions.financial_support_boost,
        )

    def test_unknown_id_lists_valid_ones(self):
        with pytest.raises(ValueError, match="S0.*S7"):
            builtin_scenario("S9")


class TestRunEnsemble:
    def test_single_agent_single_semester(self):
        m = run_ensemble(tiny_spec(n_agents=1, n_realisations=1, horizon=1))
        assert m.d_total in (0.0, 1.0)

    def test_deterministic(self):
        a = run_ensemble(tiny_spec())
        b = run_ensemble(tiny_spec())
        assert a == b

    def test_worker_count_invariance(self):
        sequential = run_ensemble(tiny_spec(), workers=1)
        parallel = run_ensemble(tiny_spec(), workers=2)
        assert sequential == parallel


class TestRunSweep:
    def sweep(self):
        return SweepSpec(lambda_inf_grid=(1.0, 1.2), lambda_str_grid=(1.0, 2.0),
                         base=tiny_spec(), bootstrap_resamples=50)

    def test_grid_complete_and_axes_exactly_zero(self):
        result = run_sweep(self.sweep())
        assert set(result.cells) == {(1.0, 1.0), (1.0, 2.0), (1.2, 1.0), (1.2, 2.0)}
        assert result.cells[(1.0, 1.0)].amplification == 0.0
        assert result.cells[(1.0, 2.0)].amplification == 0.0
        assert result.cells[(1.2, 1.0)].amplification == 0.0
        assert result.cells[(1.0, 2.0)].amplification_ci == (0.0, 0.0)

    def test_origin_cell_matches_plain_ensemble(self):
        result = run_sweep(self.sweep())
        base = run_ensemble(tiny_spec())
        assert result.cells[(1.0, 1.0)].d_total == pytest.approx(base.d_total, abs=1e-12)

    def test_csv_rows_row_major(self):
        result = run_sweep(self.sweep())
        rows = sweep_csv_rows(result)
        assert len(rows) == 4
        assert [r[:2] for r in rows] == [(1.0, 1.0), (1.0, 2.0), (1.2, 1.0), (1.2, 2.0)]

    def test_grid_validation(self):
        with pytest.raises(ValueError, match="ascending"):
            SweepSpec(lambda_inf_grid=(1.2, 1.0))
        with pytest.raises(ValueError, match="start at 1.0"):
            SweepSpec(lambda_inf_grid=(1.1, 1.2))
        with pytest.raises(ValueError, match="non-empty"):
            SweepSpec(lambda_str_grid=())


class TestSensitivityRun:
    def test_neutral_override_reproduces_base(self):
        spec = tiny_spec()
        report = sensitivity_run(spec, {"tau_scale": 1.0}, check_properties=False)
        assert report.results[0].metrics == report.base_metrics
        assert report.results[0].delta_d_total == 0.0

    def test_higher_thresholds_raise_dropout(self):
        spec = tiny_spec(n_agents=100, n_realisations=10)
        report = sensitivity_run(spec, {"tau_scale": 1.2}, check_properties=False)
        assert report.results[0].delta_d_total > 0.0

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError, match="tau_scale"):
            sensitivity_run(tiny_spec(), {"tau_scale": 1.3}, check_properties=False)
        with pytest.raises(ValueError, match="rho_mean"):
            sensitivity_run(tiny_spec(), {"rho_mean": 0.8}, check_properties=False)
        with pytest.raises(ValueError, match="100 or 500"):
            sensitivity_run(tiny_spec(), {"n_realisations": 50}, check_properties=False)

    def test_unknown_override_rejected(self):
        with pytest.raises(ValueError, match="unknown sensitivity override"):
            sensitivity_run(tiny_spec(), {"nonsense": 1}, check_properties=False)

    def test_shock_form_override(self):
        spec = tiny_spec()
        report = sensitivity_run(spec, {"shock_form": PAPER_LITERAL}, check_properties=False)
        # the literal form is not neutral at lambda = 1, so the baseline shifts
        assert report.results[0].metrics != report.base_metrics


class TestSerialisation:
    def test_scenario_round_trip(self):
        spec = tiny_spec(shock=ShockConfig(lambda_inf=1.2, strike_schedule={1: 2.5}))
        doc = scenario_to_dict(spec)
        restored = scenario_from_dict(doc)
        assert restored == spec
        assert restored.shock.strike_schedule == {1: 2.5}

    def test_sweep_round_trip(self):
        sweep = SweepSpec(lambda_inf_grid=(1.0, 1.1), lambda_str_grid=(1.0, 1.5),
                          base=tiny_spec(), bootstrap_resamples=12)
        assert sweep_from_dict(sweep_to_dict(sweep)) == sweep

    def test_unknown_field_path_in_error(self):
        with pytest.raises(ValueError, match="scenario.bogus"):
            scenario_from_dict({"bogus": 1})

    def test_nested_error_carries_path(self):
        with pytest.raises(ValueError, match="scenario.shock"):
            scenario_from_dict({"shock": {"lambda_inf": 0.2}})
        with pytest.raises(ValueError, match="scenario.shock.strike_schedule"):
            scenario_from_dict({"shock": {"strike_schedule": "often"}})

    def test_spec_hash_stable_under_key_order(self):
        assert spec_hash({"a": 1, "b": [1, 2]}) == spec_hash({"b": [1, 2], "a": 1})
        assert spec_hash({"a": 1}) != spec_hash({"a": 2})

    def test_horizon_bounds(self):
        with pytest.raises(ValueError):
            ScenarioSpec(horizon=13)
        assert ScenarioSpec(horizon=0).horizon == 0
