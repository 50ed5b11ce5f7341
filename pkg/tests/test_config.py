import json

import pytest
from hypothesis import given, strategies as st

from sovorch.config import Config, load_config
from sovorch.model import SchemaError
from sovorch.telemetry import Tier


def test_defaults_round_trip():
    c = Config()
    assert c.cycle_seconds == 300 and c.alpha == 0.5 and c.seeds == (0, 1, 2, 3, 4)
    assert Config.from_dict(json.loads(json.dumps(c.to_dict()))) == c


def test_loop_config_carries_cycle_into_policy():
    lc = Config(cycle_seconds=900.0).loop_config(certificates=False)
    assert lc.policy.cycle_seconds == 900.0 and not lc.certificates


def test_overrides():
    c = Config().with_overrides(alpha=0.2, budget_secs=5, seed=7)
    assert (c.alpha, c.budget_secs, c.seeds) == (0.2, 5.0, (7,))


@pytest.mark.parametrize("doc,field", [
    ({"alpha": 2}, "config.alpha"),
    ({"alpha": "x"}, "config.alpha"),
    ({"alpah": 0.3}, "config.alpah"),
    ({"retry_limit": 1.5}, "config.retry_limit"),
    ({"seeds": []}, "config.seeds"),
    ({"seeds": [True]}, "config.seeds"),
    ({"freshness": {"tau_max": {"power_cap": 0}}}, "config.freshness.tau_max.power_cap"),
    ({"freshness": {"tier": {"delay": "Sometimes"}}}, "config.freshness.tier.delay"),
    ({"twin": {"congestion": 1.5}}, "config.twin.congestion"),
    ({"twin": {"region_allowances": {"eu": "eu-only"}}}, "config.twin.region_allowances.eu"),
])
def test_invalid_documents_name_the_field(doc, field):
    with pytest.raises(SchemaError) as e:
        Config.from_dict(doc)
    assert e.value.field == field


def test_freshness_override_applies():
    c = Config.from_dict({"freshness": {"tau_max": {"carbon_intensity": 60},
                                        "tier": {"power_cap": "Hold"}}})
    assert c.freshness.for_param("site/S1/carbon_intensity").tau_max == 60
    assert c.freshness.for_param("site/S1/power_cap").tier is Tier.HOLD


def test_load_config_errors(tmp_path):
    assert load_config(None) == Config()
    bad = tmp_path / "c.json"
    bad.write_text("{\n  \"alpha\": ,\n}")
    with pytest.raises(SchemaError) as e:
        load_config(bad)
    assert e.value.field == str(bad) and "line 2" in e.value.message
    with pytest.raises(SchemaError):
        load_config(tmp_path / "missing.json")
    bad.write_text('{"budget_secs": -1}')
    with pytest.raises(SchemaError) as e:
        load_config(bad)
    assert e.value.field == "c.json.budget_secs"


@given(st.dictionaries(st.text(max_size=12),
                       st.one_of(st.none(), st.booleans(), st.integers(), st.floats(),
                                 st.text(max_size=5), st.lists(st.integers(), max_size=3)),
                       max_size=4))
def test_fuzzed_documents_either_load_or_name_a_field(doc):
    try:
        Config.from_dict(doc)
    except SchemaError as e:
        assert e.field.startswith("config")
