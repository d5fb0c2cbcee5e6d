import numpy as np
import pytest

from twoscale.config import Expression, defaults, parse_config
from twoscale.errors import ConfigError


def test_defaults():
    cfg = defaults()
    assert cfg["nx"] == 100 and cfg["dt"] == 0.01
    assert cfg.Q_values == (2.5,)
    mc = cfg.macro_config()
    assert mc.kinetics.Q == 2.5 and mc.materials.lambda_s == 7e-4
    assert cfg.provenance[("cell", "r")].startswith("default")


def test_explicit_values_and_provenance():
    cfg = parse_config("""
    # comment
    [kinetics]
    Q = 0.1, 1, 2.5, 25
    [time]
    dt = 0.02   # trailing comment
    """)
    assert cfg.Q_values == (0.1, 1.0, 2.5, 25.0)
    assert [m.kinetics.Q for m in cfg.macro_configs()] == [0.1, 1.0, 2.5, 25.0]
    assert cfg["dt"] == 0.02
    assert cfg.provenance[("time", "dt")] == "explicit (line 6)"


def test_round_trip():
    cfg = parse_config("[initial]\nu_I = 1.7 + 0.1 * sin(pi * y)\n[kinetics]\nQ = 0.1, 2.5\n")
    back = parse_config(cfg.dumps())
    assert back.values == cfg.values


def test_expression_fields():
    e = Expression("1.7 + 0.1 * sin(pi * y) * exp(-t)")
    x = np.zeros(3)
    y = np.array([0.0, 0.5, 1.0])
    assert np.allclose(e(x, y, 0.0), 1.7 + 0.1 * np.sin(np.pi * y))
    assert Expression("2")(x, y, 1.0).shape == (3,)


@pytest.mark.parametrize("text", ["__import__('os')", "x.real", "lambda: 1", "foo + 1", "open(1)"])
def test_expression_rejects(text):
    with pytest.raises(ValueError):
        Expression(text)


@pytest.mark.parametrize("text,line", [
    ("[cell]\nr = 0.6\n", 2),
    ("[cell]\nn_circle = 12\n", 2),
    ("[domain]\nnx = ten\n", 2),
    ("[domain]\nfoo = 1\n", 2),
    ("[nowhere]\n", 1),
    ("[time]\ndt 0.1\n", 2),
    ("[kinetics]\nQ = -1\n", 2),
    ("[tensors]\nsource = magic\n", 2),
    ("[tensors]\nu_grid = 1, 0, 5\n", 2),
    ("[domain\n", 1),
])
def test_errors_name_line(text, line):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


def test_key_outside_section():
    assert parse_config("dt = 0.5\n")["dt"] == 0.5
    with pytest.raises(ConfigError):
        parse_config("D = 0.1\nwhatever = 1\n")


def test_inconsistent_materials_rejected():
    with pytest.raises(ConfigError):
        parse_config("[materials]\nlambda_g = 0\n")


def test_recipes_parse():
    from pathlib import Path
    recipes = sorted((Path(__file__).resolve().parents[1] / "recipes").glob("paper_*.cfg"))
    assert len(recipes) >= 4
    for p in recipes:
        cfg = parse_config(p.read_text())
        assert cfg.macro_configs()
