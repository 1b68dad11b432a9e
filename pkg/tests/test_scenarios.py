import copy
import json

import pytest

from algdelay.scenarios import BUILTINS, ScenarioError, builtin, load_scenario, model_from_dict, scenario_hash


@pytest.mark.parametrize("name", sorted(BUILTINS))
def test_builtins_load(name):
    sc = load_scenario(name)
    assert sc.name == name and sc.model.name == name
    assert sc.model.delta_min > 0


def test_builtin_dimensions():
    assert (builtin("echo").n, builtin("echo").k, builtin("echo").h) == (1, 1, 2.0)
    assert (builtin("pair").n, builtin("pair").k, builtin("pair").kn) == (2, 2, 4)
    assert builtin("lin2").explicit_delay and not builtin("echo").explicit_delay


def test_hash_is_key_order_independent(tmp_path):
    d = BUILTINS["echo"]
    shuffled = dict(reversed(list(d.items())))
    assert scenario_hash(d) == scenario_hash(shuffled)
    path = tmp_path / "echo.json"
    path.write_text(json.dumps(shuffled, indent=4))
    assert load_scenario(str(path)).hash == load_scenario("echo").hash
    assert load_scenario("echo").hash != load_scenario("echo_box").hash


def broken(**changes):
    d = copy.deepcopy(BUILTINS["echo"])
    for key, val in changes.items():
        if val is None:
            d.pop(key)
        else:
            d[key] = val
    return d


@pytest.mark.parametrize(
    "d, fragment",
    [
        (broken(h=None), "'h'"),
        (broken(n=0), "'n' and 'k'"),
        (broken(g={"expr": ["-v1", "v1"]}), "g.expr"),
        (broken(g={"expr": ["-v1 +"]}), "g.expr"),
        (broken(g={"expr": ["__import__('os')"]}), "g.expr"),
        (broken(V={"boxes": []}), "'V'"),
        (broken(Q={"variant": "other"}), "Q.variant"),
        (broken(delta={"variant": "offset", "d": ["1"], "W": [[1.0, -1.0]]}), "delta.W"),
        (broken(delta={"variant": "offset", "d": ["1"], "W": [[0.0, 0.0]]}), "delta.W"),
        (broken(delta={"variant": "offset", "W": [[-1, 1]]}), "delta.d"),
        (broken(delta={"variant": "mystery", "W": [[-1, 1]]}), "delta.variant"),
        ([1, 2], "JSON object"),
    ],
)
def test_invalid_scenarios_name_the_field(d, fragment):
    with pytest.raises(ScenarioError, match=fragment.replace("(", r"\(").replace(".", r"\.")):
        model_from_dict(d)


def test_json_syntax_error_reports_position(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "h": 2.0,\n  "n": \n}')
    with pytest.raises(ScenarioError, match=r"line 4, column 1"):
        load_scenario(str(path))


def test_unknown_reference():
    with pytest.raises(ScenarioError, match="neither a built-in"):
        load_scenario("no_such_scenario")


def test_general_delta_variant():
    d = copy.deepcopy(BUILTINS["echo"])
    d["delta"] = {"variant": "general", "fn": ["r1 + 1 + w1**2/2"], "W": [[-1.0, 1.0]]}
    m = model_from_dict(d)
    assert not m.explicit_delay
    assert m.delta.value([-1.0], [0.0]).tolist() == [0.0]
