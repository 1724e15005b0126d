import json

import numpy as np
import pytest

from wcelab import cli
from wcelab.genexpr import parse
from wcelab.oracle import PNormEstimate
from wcelab.specfile import SpecError, bundled, load, parse_spec, resolve

SMALL = """
p = {p}
[[block]]
labels = {labels}
weights = {weights}
[[block]]
labels = {labels2}
weights = {weights2}
[u]
table = {u}
[w]
expr = "{w}"
"""


def random_spec(tmp_path, seed=0, p=2):
    rng = np.random.default_rng(seed)
    labels = list(range(1, 17))
    weights = np.round(rng.uniform(0.1, 10, 16), 6).tolist()
    u = [[lab, round(float(v), 6)] for lab, v in zip(labels, rng.uniform(-5, 5, 16))]
    text = SMALL.format(p=p, labels=labels[:7], weights=weights[:7], labels2=labels[7:],
                        weights2=weights[7:], u=u, w="sqrt(x) - 2")
    path = tmp_path / "random.spec"
    path.write_text(text)
    return str(path)


def test_bundled_scenarios_load():
    assert {"example.spec", "example-l1.spec", "nonatomic.spec", "multiplication.spec"} <= set(bundled())
    for name in bundled():
        load(name)


def test_example_lp_alias_resolves_to_example():
    assert resolve("example-lp") == resolve("example.spec")


def test_example_scenario_contents():
    spec = load("example")
    assert [f.name for f in spec.space.families] == ["evens", "odds"]
    assert spec.u.expr == parse("x")
    assert spec.w.expr == parse("1/x^3")
    assert set(spec.declarations) == {"evens", "odds"}


def test_validation_collects_every_error():
    text = """
p = 0.5
[[family]]
name = "a"
label = "n"
weight = "-1"
[family.dominate]
s = 1
[u]
expr = "x +"
[w]
expr = "1"
"""
    with pytest.raises(SpecError) as exc:
        parse_spec(text)
    msg = "\n".join(exc.value.errors)
    assert "out of [1, inf)" in msg
    assert "s > 1" in msg
    assert "position" in msg
    assert len(exc.value.errors) == 3


def test_nonpositive_weight_is_reported():
    text = '''
p = 2
[[family]]
name = "a"
label = "n"
weight = "-1"
[u]
expr = "1"
[w]
expr = "1"
'''
    with pytest.raises(SpecError, match="nonpositive weight"):
        parse_spec(text)


def test_duplicate_labels_are_reported():
    text = SMALL.format(p=2, labels=[1, 2], weights=[1, 1], labels2=[2, 3], weights2=[1, 1],
                        u=[[1, 1]], w="1")
    with pytest.raises(SpecError, match="duplicate label"):
        parse_spec(text)


def test_toml_syntax_error_has_a_location():
    with pytest.raises(SpecError, match="line"):
        parse_spec("p = = 2")


def test_nuclear_command(tmp_path, capsys):
    out = tmp_path / "n.json"
    assert cli.main(["nuclear", "example", "--terms", "10000", "--out", str(out)]) == 0
    data = json.loads(out.read_text())["nuclear"]
    assert data["verdict"] == "NuclearCertified"
    assert data["partial_sum"] < data["certified_total"]
    assert "verdict: NuclearCertified" in capsys.readouterr().out


def test_compact_command_on_constant_symbol(capsys):
    assert cli.main(["compact", "constant", "--eps", "0.5"]) == 0
    assert "verdict: NotCompact" in capsys.readouterr().out


def test_oracle_command_on_a_random_spec(tmp_path, capsys):
    assert cli.main(["oracle", random_spec(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "trace norm" in out and "agree" in out and "DISAGREE" not in out


def test_oracle_command_at_other_exponents(tmp_path):
    for p in (1, 1.5, 3):
        assert cli.main(["oracle", random_spec(tmp_path, seed=3, p=p)]) == 0


def test_invalid_input_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.spec"
    bad.write_text("p = 0.5\n[u]\nexpr = \"1\"\n[w]\nexpr = \"1\"\n")
    assert cli.main(["norm", str(bad)]) == 2
    assert "out of [1, inf)" in capsys.readouterr().err
    assert cli.main(["norm", str(tmp_path / "missing.spec")]) == 2
    assert cli.main(["norm", "example", "--p", "0.5"]) == 2


def test_oracle_disagreement_exit_code(monkeypatch, tmp_path):
    class Fake:
        pnorm = PNormEstimate(123.0, np.zeros(1), True)

    monkeypatch.setattr(cli.orc, "oracle_report", lambda *a, **k: Fake())
    assert cli.main(["norm", random_spec(tmp_path)]) == 3


def test_machine_output_uses_17_digits(tmp_path):
    out = tmp_path / "r.json"
    assert cli.main(["norm", "example", "--terms", "50", "--out", str(out)]) == 0
    text = out.read_text()
    assert json.loads(text)["norm"]["value"] == 1.0
    assert cli.dumps(0.1) == "0.10000000000000001"
    assert cli.dumps(float("inf")) == '"inf"'


def test_witness_command(capsys):
    assert cli.main(["witness", "nonatomic", "--delta", "0.9", "--count", "8"]) == 0
    assert "yes" in capsys.readouterr().out
    assert cli.main(["witness", "nonatomic", "--delta", "2", "--count", "2"]) == 0
    assert "no witness" in capsys.readouterr().out


def test_represent_command(capsys):
    assert cli.main(["represent", "example-l1", "--terms", "100"]) == 0
    out = capsys.readouterr().out
    assert "with E|u| in place of the dual norm" in out
