import logging

import pytest

from mptcplab.presets import PRESET_NAMES, build_preset, exp1, exp6
from mptcplab.scenario import Scenario, ScenarioError, load_scenario, scenario_from_dict
from mptcplab.workload import BSP, SSP, TAP


def minimal_raw(**overrides):
    raw = {
        "duration_s": 10.0,
        "seed": 1,
        "paths": [
            {"name": "p0", "capacity_mbps": 8.0, "prop_delay_ms": 20.0,
             "loss": 0.01, "queue_limit_pkts": 50},
        ],
        "workers": [
            {"controller": "lia", "paths": ["p0"], "model_mb": 1.0},
        ],
    }
    raw.update(overrides)
    return raw


class TestValidation:
    def test_minimal_scenario_parses(self):
        sc = scenario_from_dict(minimal_raw())
        assert sc.duration == 10.0
        assert len(sc.workers) == 1
        assert sc.scheme.kind == TAP

    def test_unknown_top_level_field(self):
        with pytest.raises(ScenarioError, match="typo_field"):
            scenario_from_dict(minimal_raw(typo_field=3))

    def test_missing_duration_reports_field(self):
        raw = minimal_raw()
        del raw["duration_s"]
        with pytest.raises(ScenarioError, match="duration_s"):
            scenario_from_dict(raw)

    def test_unknown_worker_path_reports_index(self):
        raw = minimal_raw()
        raw["workers"][0]["paths"] = ["nope"]
        with pytest.raises(ScenarioError, match=r"workers\[0\].paths"):
            scenario_from_dict(raw)

    def test_bad_loss_reports_path_index(self):
        raw = minimal_raw()
        raw["paths"][0]["loss"] = 1.2
        with pytest.raises(ScenarioError, match=r"paths\[0\].loss"):
            scenario_from_dict(raw)

    def test_bad_controller(self):
        raw = minimal_raw()
        raw["workers"][0]["controller"] = "bbr"
        with pytest.raises(ScenarioError, match="controller"):
            scenario_from_dict(raw)

    def test_competitor_direction_checked(self):
        raw = minimal_raw(competitors=[{"path": "p0", "direction": "sideways"}])
        with pytest.raises(ScenarioError, match=r"competitors\[0\].direction"):
            scenario_from_dict(raw)

    def test_worker_count_expands(self):
        raw = minimal_raw()
        raw["workers"][0]["count"] = 4
        sc = scenario_from_dict(raw)
        assert len(sc.workers) == 4

    def test_transfer_scale_divides_model(self):
        raw = minimal_raw(transfer_scale=100.0)
        raw["workers"][0]["model_mb"] = 600.0
        sc = scenario_from_dict(raw)
        assert sc.workers[0].model_bytes == 6_000_000

    def test_ssp_scheme(self):
        sc = scenario_from_dict(minimal_raw(scheme={"kind": "ssp", "staleness": 3}))
        assert sc.scheme.kind == SSP
        assert sc.scheme.staleness == 3

    def test_inline_trace(self):
        raw = minimal_raw()
        raw["paths"][0] = {"name": "p0", "trace": [[0, 8], [5, 4]],
                           "prop_delay_ms": 20.0}
        sc = scenario_from_dict(raw)
        assert sc.paths[0].capacity_trace == [(0.0, 8e6), (5.0, 4e6)]

    def test_out_of_range_warns_but_parses(self, caplog):
        raw = minimal_raw()
        raw["paths"][0]["capacity_mbps"] = 1.0   # below the tuned range
        raw["paths"][0]["queue_limit_pkts"] = 5  # below the tuned range
        with caplog.at_level(logging.WARNING, logger="mptcplab.scenario"):
            scenario_from_dict(raw)
        text = caplog.text
        assert "outside the tuned range" in text

    def test_yaml_file_roundtrip(self, tmp_path):
        f = tmp_path / "sc.yaml"
        f.write_text(
            "duration_s: 5.0\nseed: 2\npaths:\n"
            "  - {name: a, capacity_mbps: 8, prop_delay_ms: 10}\n"
            "workers:\n  - {controller: lia, paths: [a], model_mb: 1}\n")
        sc = load_scenario(str(f))
        assert sc.seed == 2
        assert sc.name == "sc"

    def test_trace_file_reference(self, tmp_path):
        (tmp_path / "cap.csv").write_text("0,8\n10,2\n")
        f = tmp_path / "sc.yaml"
        f.write_text(
            "duration_s: 5.0\npaths:\n"
            "  - {name: a, trace_file: cap.csv, prop_delay_ms: 10}\n"
            "workers:\n  - {controller: lia, paths: [a], model_mb: 1}\n")
        sc = load_scenario(str(f))
        assert sc.paths[0].capacity_trace == [(0.0, 8e6), (10.0, 2e6)]


class TestPresets:
    @pytest.mark.parametrize("name", PRESET_NAMES)
    def test_presets_build_for_all_controllers(self, name):
        for controller in ("lia", "hybrid", "drl"):
            sc = build_preset(name, seed=3, controller=controller)
            assert isinstance(sc, Scenario)
            assert sc.seed == 3

    def test_preset_is_pure_function_of_args(self):
        a = exp1(seed=5, controller="hybrid")
        b = exp1(seed=5, controller="hybrid")
        assert a == b

    def test_exp1_square_wave(self):
        sc = exp1(seed=0, controller="lia")
        wave = next(p for p in sc.paths if p.name == "wave")
        assert wave.capacity_trace[0] == (0.0, 8e6)
        assert wave.capacity_trace[1] == (15.0, 2e6)
        assert sc.workers[0].model_bytes == 6_000_000  # 600 MB desk-scaled

    def test_exp6_straggler_count(self):
        sc = exp6(seed=0, controller="lia", straggler_count=3)
        slow = [w for w in sc.workers if w.compute_mean > 1.0]
        assert len(slow) == 3

    def test_drl_preset_uses_fast_slot(self):
        sc = build_preset("exp3", seed=0, controller="drl")
        assert sc.agent.slot_s == pytest.approx(0.02)
        sc = build_preset("exp3", seed=0, controller="hybrid")
        assert sc.agent.slot_s == pytest.approx(0.1)

    def test_unknown_preset(self):
        with pytest.raises(ValueError):
            build_preset("exp99", seed=0)
