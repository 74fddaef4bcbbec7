import csv
import math
from fractions import Fraction

import numpy as np
import pytest

from corpus import DERIVED, brownian
from stosym import ItoSDE, make_context
from stosym.sim import (
    SimConfig, conserved_drift, moment_agreement, moments, simulate, thread_count, write_csv,
)
from stosym.strato import StratSDE, ito_to_strat

SIM = DERIVED["simulation"]


def scalar(drift, sigma, **bindings):
    ctx = make_context(["x"], params=list(bindings), bindings=bindings or None)
    return ItoSDE(ctx, [drift], [[sigma]])


def within(value, target, se, k=5.0):
    return abs(value - target) <= k * se


# ---------------------------------------------------------------- configuration

@pytest.mark.parametrize("kw", [
    dict(dt=0.0, T=1.0, paths=1, x0=[0.0]),
    dict(dt=2.0, T=1.0, paths=1, x0=[0.0]),
    dict(dt=0.1, T=1.0, paths=0, x0=[0.0]),
    dict(dt=0.1, T=1.0, paths=1, x0=[0.0], scheme="milstein"),
])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SimConfig(**kw)


def test_scheme_must_match_calculus():
    ito = scalar("x", "x")
    with pytest.raises(TypeError):
        simulate(ito, SimConfig(0.1, 1.0, 2, [1.0], scheme="stratonovich-heun"))
    with pytest.raises(TypeError):
        simulate(ito_to_strat(ito), SimConfig(0.1, 1.0, 2, [1.0]))


def test_initial_state_length():
    with pytest.raises(ValueError):
        simulate(scalar("x", "x"), SimConfig(0.1, 1.0, 2, [1.0, 2.0]))


def test_unbound_parameter_rejected():
    with pytest.raises(ValueError):
        simulate(brownian(), SimConfig(0.1, 1.0, 2, [0.0]))


# ---------------------------------------------------------------- statistics

def test_vanishing_coefficients_give_constant_paths():
    ctx = make_context(["x", "y"], noises=["w"])
    s = ItoSDE(ctx, ["0", "1"], [["0"], ["1"]])
    ens = simulate(s, SimConfig(0.01, 1.0, 8, [0.7, 0.0]))
    assert np.all(ens.states[:, :, 0] == 0.7)


def test_brownian_variance():
    ens = simulate(brownian(bound=True), SimConfig(0.01, 1.0, 4000, [0.0]))
    m = moments(ens)
    se = m["var"][0] * math.sqrt(2.0 / (m["count"] - 1))
    assert within(m["var"][0], SIM["brownian_var"], se)
    assert within(m["mean"][0], 0.0, m["mean_se"][0])


def test_ornstein_uhlenbeck_stationary_variance():
    s = scalar("-x", "sqrt(2)")
    ens = simulate(s, SimConfig(0.01, 5.0, 4000, [0.0]))
    m = moments(ens)
    target = SIM["ou_stationary_var"] * (1 - math.exp(-10.0))
    se = m["var"][0] * math.sqrt(2.0 / (m["count"] - 1))
    # Euler-Maruyama bias at dt = 0.01 is about dt/2 relative
    assert abs(m["var"][0] - target) <= 5 * se + 0.01


def test_geometric_motion_moments():
    ens = simulate(scalar("x", "x"), SimConfig(0.001, 1.0, 4096, [1.0]))
    m = moments(ens)
    assert within(m["mean"][0], SIM["gbm_mean"], m["mean_se"][0])
    assert abs(m["m2"][0] - SIM["gbm_m2"]) <= 5 * m["m2_se"][0] + 0.02 * SIM["gbm_m2"]


def test_ito_and_stratonovich_forms_agree():
    ito = scalar("x", "x")
    a = simulate(ito, SimConfig(0.001, 1.0, 4096, [1.0], seed=42))
    b = simulate(ito_to_strat(ito), SimConfig(0.001, 1.0, 4096, [1.0], seed=43, scheme="stratonovich-heun"))
    assert moment_agreement(a, b, k=5)["ok"]


def test_misawa_radius_conserved():
    ctx = make_context(["x", "y", "z"])
    s = StratSDE(ctx, ["-(y - z)", "-(z - x)", "-(x - y)"], [["z - y"], ["x - z"], ["y - x"]])
    ens = simulate(s, SimConfig(0.001, 1.0, 256, [1.0, 0.5, -0.3], scheme="stratonovich-heun"))
    assert conserved_drift(ens, "x^2 + y^2 + z^2", ctx)["max_relative_drift"] < 1e-2
    assert conserved_drift(ens, "x", ctx)["max_relative_drift"] > 0.1


def test_blowups_reported_not_raised():
    ctx = make_context(["x"], noises=["w"])
    ens = simulate(ItoSDE(ctx, ["x^2"], [["1"]]), SimConfig(0.01, 3.0, 3, [1.0]))
    assert len(ens.blowups) == 3
    assert all(s > 0 for _, s in ens.blowups)
    assert not ens.ok.any()
    assert ens.summary()["blowups"]


# ---------------------------------------------------------------- reproducibility

def test_same_paths_for_any_thread_count():
    ctx = make_context(["x"], params=["s0"], bindings={"s0": Fraction(3, 2)})
    s = ItoSDE(ctx, ["-x"], [["s0"]])
    cfg = SimConfig(0.01, 1.0, 37, [0.0])
    one = simulate(s, cfg, threads=1)
    many = simulate(s, cfg, threads=5)
    assert np.array_equal(one.states, many.states)


def test_seed_changes_paths():
    s = brownian(bound=True)
    a = simulate(s, SimConfig(0.1, 1.0, 4, [0.0], seed=1))
    b = simulate(s, SimConfig(0.1, 1.0, 4, [0.0], seed=2))
    assert not np.array_equal(a.states, b.states)


def test_thread_count_env(monkeypatch):
    monkeypatch.setenv("STOSYM_THREADS", "3")
    assert thread_count() == 3
    monkeypatch.delenv("STOSYM_THREADS")
    assert thread_count() >= 1


def test_csv_format(tmp_path):
    ens = simulate(brownian(bound=True), SimConfig(0.25, 1.0, 2, [0.1]))
    out = tmp_path / "paths.csv"
    write_csv(ens, out)
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["path", "step", "t", "x"]
    assert len(rows) == 1 + 2 * 5
    assert rows[1][:3] == ["0", "0", "0"]
    assert float(rows[1][3]) == 0.1 and rows[1][3] == f"{0.1:.17g}"
    assert float(rows[2][3]) == ens.states[0, 1, 0]
