import pytest

from helpers import small_scenario_dict, write_scenario
from ofogrid.harness.scenario import (
    ConfigError,
    load_scenario,
    scenario_from_dict,
)


@pytest.mark.parametrize("name", ["ieee13-mod", "ieee13-mod-charge-biased"])
def test_bundled_scenarios_load(name):
    sc = load_scenario(name)
    assert sc.n_steps == 18000
    assert [b.bus for b in sc.batteries] == ["611", "675", "680"]
    assert sc.warmup == 120.0


def test_charge_biased_differs_in_disturbance():
    main, biased = load_scenario("ieee13-mod"), load_scenario("ieee13-mod-charge-biased")
    assert max(d.range_mw[1] for d in biased.data_centers) < max(d.range_mw[1] for d in main.data_centers)


@pytest.mark.parametrize(
    "change, path",
    [
        (dict(dt=0.0), "dt"),
        (dict(duration=10.05), "duration"),
        (dict(warmup=40.0), "warmup"),
        (dict(controller="pid"), "controller"),
        (dict(soc_mode="magic"), "soc_mode"),
        (dict(voltage_limits=[1.05, 0.95]), "voltage_limits"),
        (dict(batteries=[]), "batteries"),
        (dict(ofo={"rho": 0}), "ofo.rho"),
        (dict(ofo={"c_q": -1}), "ofo.c_q"),
        (dict(benchmark={"deadband": 0.5}), "benchmark"),
        (dict(seed="abc"), "seed"),
        (dict(bogus=1), "bogus"),
    ],
)
def test_field_paths(change, path):
    with pytest.raises(ConfigError) as info:
        scenario_from_dict(small_scenario_dict(**change))
    assert info.value.path == path


def test_nested_field_paths():
    data = small_scenario_dict()
    data["batteries"][2]["eta_charge"] = 1.5
    with pytest.raises(ConfigError) as info:
        scenario_from_dict(data)
    assert info.value.path == "batteries[2].eta_charge"

    data = small_scenario_dict()
    data["data_centers"][0]["trace"] = {"kind": "file"}
    with pytest.raises(ConfigError) as info:
        scenario_from_dict(data)
    assert info.value.path == "data_centers[0].trace.path"

    data = small_scenario_dict()
    data["data_centers"][1]["range_mw"] = [2, 1]
    with pytest.raises(ConfigError, match=r"data_centers\[1\].range_mw"):
        scenario_from_dict(data)


def test_duplicate_battery_bus():
    data = small_scenario_dict()
    data["batteries"][1]["bus"] = data["batteries"][0]["bus"]
    with pytest.raises(ConfigError, match="one battery per bus"):
        scenario_from_dict(data)


def test_yaml_error_has_position(tmp_path):
    path = tmp_path / "broken.yaml"
    path.write_text("name: x\nbatteries: [\n  - {bus: 611\n")
    with pytest.raises(ConfigError, match="line"):
        load_scenario(path)


def test_missing_file():
    with pytest.raises(ConfigError, match="cannot read"):
        load_scenario("/nonexistent/scenario.yaml")


def test_overrides_revalidate():
    sc = scenario_from_dict(small_scenario_dict())
    assert sc.with_overrides(seed=5, warmup=None).seed == 5
    with pytest.raises(ConfigError):
        sc.with_overrides(warmup=1e6)


def test_relative_paths_resolve_from_scenario_dir(tmp_path):
    path = write_scenario(tmp_path / "s.yaml", small_scenario_dict(feeder="sub/f.yaml"))
    assert load_scenario(path).feeder_source() == str(tmp_path / "sub" / "f.yaml")
