import copy

import numpy as np
import pytest
import yaml

from stlbarrier import stl
from stlbarrier.config import (ABLATIONS, ConfigError, bundled_scenarios, describe, load_config, parse_config,
                               sample_x0)


@pytest.fixture
def raw():
    return copy.deepcopy(load_config("double_integrator_I1").raw)


def test_bundled_scenarios_load():
    names = bundled_scenarios()
    assert {"double_integrator_I1", "double_integrator_I2_memory", "unicycle_II"} <= set(names)
    for n in names:
        cfg = load_config(n)
        assert cfg.K == round(cfg.horizon / cfg.dt)
        stl.validate_fragment(cfg.formula())


def test_I1_formula_shape():
    cfg = load_config("double_integrator_I1")
    f = cfg.formula()
    assert stl.horizon(f) == 5.0
    assert cfg.K == 50
    assert cfg.policy.multiplier_mode == "varying" and cfg.policy.feasibility


def test_memory_scenario_flag():
    assert load_config("double_integrator_I2_memory").policy.memory


def test_load_from_path(tmp_path, raw):
    p = tmp_path / "s.yaml"
    p.write_text(yaml.safe_dump(raw))
    assert load_config(p).config_hash() == load_config("double_integrator_I1").config_hash()


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/thing.yaml")


def test_malformed_yaml(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("name: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(p)


@pytest.mark.parametrize("mutate", [
    lambda r: r.pop("system"),
    lambda r: r.__setitem__("system", "quadrotor"),
    lambda r: r.__setitem__("dt", -0.1),
    lambda r: r.__setitem__("horizon", 5.05),
    lambda r: r["input_bounds"].__setitem__("u_min", [1.0, -10.0]),
    lambda r: r["input_bounds"].__setitem__("u_max", [-20.0, 10.0]),
    lambda r: r["init_box"].__setitem__("low", [2.0, 0.0]),
    lambda r: r["tasks"].append({"op": "F", "interval": [0, 9], "predicates": ["Reg1"]}),
    lambda r: r["tasks"].append({"op": "U", "interval": [0, 1], "predicates": ["Reg1"]}),
    lambda r: r["tasks"].append({"op": "F", "interval": [2, 1], "predicates": ["Reg1"]}),
    lambda r: r["tasks"].append({"op": "F", "interval": [0, 1], "predicates": ["Nowhere"]}),
    lambda r: r.__setitem__("tasks", []),
    lambda r: r["predicates"].append(dict(r["predicates"][0])),
    lambda r: r["predicates"][0].__setitem__("role", "maybe"),
    lambda r: r["predicates"][0].__setitem__("radius", -1.0),
    lambda r: r["robustness"].__setitem__("beta", 1.5),
    lambda r: r["hocbf"].__setitem__("c", 0.0),
    lambda r: r["hocbf"].__setitem__("surprise", 1),
    lambda r: r["policy"].__setitem__("ablation", "bn-magic"),
    lambda r: r["policy"].__setitem__("q_mode", "diagonal"),
    lambda r: r["train"].__setitem__("V", 0),
    lambda r: r["train"].__setitem__("lr", "fast"),
], ids=lambda f: "")
def test_invalid(raw, mutate):
    mutate(raw)
    with pytest.raises(ConfigError):
        parse_config(raw)


def test_not_a_mapping():
    with pytest.raises(ConfigError):
        parse_config([1, 2])


class TestOverridesAndHash:
    def test_override_fields(self):
        cfg = load_config("double_integrator_I1").with_overrides(ablation="bn-fixedp", memory=True, iters=7, seed=3)
        assert cfg.policy.ablation == "bn-fixedp" and cfg.policy.memory
        assert cfg.train.iters == 7 and cfg.train.seed == 3

    def test_iters_and_seed_do_not_change_hash(self):
        cfg = load_config("double_integrator_I1")
        assert cfg.with_overrides(iters=3, seed=9).config_hash() == cfg.config_hash()

    @pytest.mark.parametrize("abl", [a for a in ABLATIONS if a != "feasibn-varp"])
    def test_ablation_changes_hash(self, abl):
        cfg = load_config("double_integrator_I1")
        assert cfg.with_overrides(ablation=abl).config_hash() != cfg.config_hash()

    def test_geometry_changes_hash(self, raw):
        a = parse_config(raw)
        raw["predicates"][0]["radius"] = 0.6
        assert parse_config(raw).config_hash() != a.config_hash()

    def test_original_untouched(self):
        cfg = load_config("double_integrator_I1")
        cfg.with_overrides(ablation="fcnet")
        assert cfg.policy.ablation == "feasibn-varp"


class TestPolicyFlags:
    @pytest.mark.parametrize("abl,mode,fea,qp", [
        ("bn-fixedp", "fixed", False, True),
        ("bn-varp", "varying", False, True),
        ("feasibn-varp", "varying", True, True),
        ("fcnet", "varying", False, False),
        ("hocbf-baseline", "fixed", False, True),
    ])
    def test_flags(self, abl, mode, fea, qp):
        p = load_config("double_integrator_I1").with_overrides(ablation=abl).policy
        assert (p.multiplier_mode, p.feasibility, p.uses_qp) == (mode, fea, qp)

    def test_bounds_policy(self):
        cfg = load_config("double_integrator_I1")
        assert not cfg.policy.qp_bounds
        assert cfg.with_overrides(ablation="hocbf-baseline").policy.qp_bounds

    def test_p2_lift_only_for_learned_variants(self):
        cfg = load_config("double_integrator_I1")
        assert cfg.policy.p2_floor
        assert not cfg.with_overrides(ablation="hocbf-baseline").policy.p2_floor
        assert not cfg.with_overrides(ablation="fcnet").policy.p2_floor


def test_sample_x0_in_box():
    cfg = load_config("double_integrator_I1")
    X = sample_x0(cfg, 500, np.random.default_rng(0))
    assert X.shape == (500, 4)
    assert np.all(X[:, :2] >= np.array(cfg.init_low)) and np.all(X[:, :2] <= np.array(cfg.init_high))
    np.testing.assert_array_equal(X[:, 2:], 0.0)


def test_describe():
    d = describe(load_config("unicycle_II"))
    assert d["system"] == "unicycle" and len(d["hash"]) == 16
