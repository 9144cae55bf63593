import copy
import json
from pathlib import Path

import pytest

from maneuver_zones.config import ScenarioConfig
from maneuver_zones.errors import ConfigError, ZoneFileError

PRESETS = Path(__file__).resolve().parents[1] / "src" / "maneuver_zones" / "presets"
LANE = json.loads((PRESETS / "lane_change.json").read_text())


@pytest.mark.parametrize("path", sorted(PRESETS.glob("*.json")), ids=lambda p: p.stem)
def test_presets_load_and_roundtrip(path):
    cfg = ScenarioConfig.load(path)
    again = ScenarioConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg
    assert cfg.grid.names == cfg.model.state_names


def test_lane_preset_contents():
    cfg = ScenarioConfig.from_dict(LANE)
    assert cfg.maneuver.horizon == cfg.horizon == 5.0
    assert cfg.mpc.radius == cfg.collision.radius == 2.5
    assert cfg.ego_grid.names == ("y_E", "psi_E", "v_E")
    assert cfg.projection.indices == (1, 3, 5)
    assert "mpc" not in cfg.descriptor() and "sweep" not in cfg.descriptor()


def _mutate(fn):
    d = copy.deepcopy(LANE)
    fn(d)
    return d


@pytest.mark.parametrize("mutation,path", [
    (lambda d: d.pop("horizon"), "horizon"),
    (lambda d: d.update(horizon=-1), "horizon"),
    (lambda d: d.update(horizon=True), "horizon"),
    (lambda d: d.update(colour="red"), "colour"),
    (lambda d: d["model"].update(identifier="boat"), "model.identifier"),
    (lambda d: d["model"].update(wheelbase_ego=0), "model.wheelbase"),
    (lambda d: d["grid"][2].pop("points"), "grid[2].points"),
    (lambda d: d["grid"][2].update(points=2.5), "grid[2].points"),
    (lambda d: d["grid"][0].update(name="x"), "grid"),
    (lambda d: d["maneuver"].update(delta_y_bar=0), "maneuver"),
    (lambda d: d["solver"].update(cfl_factor=2.0), "solver"),
    (lambda d: d["solver"].update(hamiltonian="roe"), "solver.hamiltonian"),
    (lambda d: d["mpc"].update(radius=3.0), "mpc.radius"),
    (lambda d: d["mpc"].update(horizon_steps=0), "mpc"),
    (lambda d: d.update(collision_radius=0), "collision_radius"),
    (lambda d: d["sweep"]["counts"].update(speed=3), "sweep.counts.speed"),
    (lambda d: d["sweep"]["counts"].update(x_rel=0), "sweep.counts.x_rel"),
    (lambda d: d["sweep"].update(ranges={"v_E": [5, 99]}), "sweep.ranges.v_E"),
    (lambda d: d["sweep"].update(completion_fraction=1.5), "sweep.completion_fraction"),
    (lambda d: d["sweep"].update(extra=1), "sweep.extra"),
])
def test_errors_name_the_field(mutation, path):
    with pytest.raises(ConfigError) as exc:
        ScenarioConfig.from_dict(_mutate(mutation))
    assert exc.value.path is not None and exc.value.path.startswith(path)


def test_matching_mpc_radius_is_accepted():
    cfg = ScenarioConfig.from_dict(_mutate(lambda d: d["mpc"].update(radius=2.5)))
    assert cfg.mpc.radius == 2.5


def test_maneuver_requires_ego_model():
    d = json.loads((PRESETS / "double_integrator.json").read_text())
    d["maneuver"] = {"kind": "rail_turn"}
    with pytest.raises(ConfigError) as exc:
        ScenarioConfig.from_dict(d)
    assert exc.value.path == "maneuver"


def test_load_errors(tmp_path):
    with pytest.raises(ZoneFileError):
        ScenarioConfig.load(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{oops")
    with pytest.raises(ConfigError):
        ScenarioConfig.load(bad)
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict([1, 2])
