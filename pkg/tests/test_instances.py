import math

import numpy as np
import pytest

from rbsvie.instances import (
    CATALOG_NAMES,
    DriverSpec,
    InstanceError,
    InstanceSpec,
    ObstacleSpec,
    TerminalSpec,
    brownian_dynamics,
    catalog_instance,
    geometric_dynamics,
    shift_driver,
    shift_obstacle,
    shift_terminal,
    verify_assumptions,
)


def test_catalog_names():
    assert set(CATALOG_NAMES) == {
        "american_put",
        "hyperbolic_discount",
        "zero_driver_flat",
        "linear_z",
        "custom_affine",
    }


def test_american_put_structure():
    spec = catalog_instance("american_put", {"strike": 1.0, "sigma": 0.2, "rate": 0.05})
    # driver is pure discounting, obstacle and terminal are the put payoff
    assert spec.driver(0.0, 0.5, 1.0, 2.0, 7.0) == pytest.approx(-0.1)
    assert spec.terminal(0.3, np.array([0.8, 1.2]))[0] == pytest.approx(0.2)
    assert spec.obstacle(0.3, np.array([0.8, 1.2]))[1] == 0.0
    assert spec.driver.lipschitz == 0.05
    assert not spec.driver.depends_on_z
    assert not spec.t_dependent


def test_american_put_dynamics_risk_neutral_drift():
    spec = catalog_instance("american_put", {"strike": 1.0, "sigma": 0.2, "rate": 0.05})
    got = float(spec.dynamics(1.0, np.array([0.5]))[0])
    assert got == pytest.approx(math.exp((0.05 - 0.02) * 1.0 + 0.2 * 0.5))


def test_hyperbolic_discount_declared_constants():
    spec = catalog_instance("hyperbolic_discount", {"rho0": 0.5, "kappa": 1.0})
    assert spec.driver.lipschitz == 0.5
    assert spec.driver.holder_const == pytest.approx(0.5)
    assert spec.driver.holder_alpha == 0.5
    assert spec.driver.t_dependent
    # discount weight decays in s - t
    f_near = spec.driver(0.0, 0.0, 0.0, 1.0, 0.0)
    f_far = spec.driver(0.0, 1.0, 0.0, 1.0, 0.0)
    assert f_near == pytest.approx(-0.5)
    assert f_far == pytest.approx(-0.25)


def test_zero_driver_flat_is_flat():
    spec = catalog_instance("zero_driver_flat")
    assert float(spec.driver(0.1, 0.7, 0.3, 5.0, -2.0)) == 0.0
    assert float(spec.obstacle(0.5, np.array([3.0]))[0]) == -1.0e6
    assert float(spec.terminal(0.2, np.array([1.5]))[0]) == 1.5


def test_linear_z_driver():
    spec = catalog_instance("linear_z", {"a": 0.4, "b": 0.0})
    assert float(spec.driver(0, 1, 0, 3.0, 2.0)) == pytest.approx(0.8)
    assert spec.driver.lipschitz == pytest.approx(0.4)
    assert not spec.driver.depends_on_y
    assert spec.driver.monotone_in_y


def test_custom_affine_t_dependence():
    spec = catalog_instance("custom_affine", {"t_coef": 0.3, "y_coef": 0.1, "z_coef": 0.0, "const": 0.0})
    assert spec.driver.t_dependent
    assert float(spec.driver(0.2, 0.7, 1.0, 0.0, 0.0)) == pytest.approx(0.15)


def test_unknown_instance_name():
    with pytest.raises(InstanceError):
        catalog_instance("asian_call")


def test_unknown_parameter_rejected():
    with pytest.raises(InstanceError):
        catalog_instance("american_put", {"rho0": 0.5})


def test_out_of_range_parameters_rejected():
    with pytest.raises(InstanceError):
        catalog_instance("american_put", {"sigma": -0.2})
    with pytest.raises(InstanceError):
        catalog_instance("american_put", {"strike": 0.0})
    with pytest.raises(InstanceError):
        catalog_instance("hyperbolic_discount", {"rho0": -1.0})


def test_holder_alpha_above_half_rejected():
    with pytest.raises(InstanceError):
        DriverSpec(name="bad", fn=lambda t, s, x, y, z: 0.0, lipschitz=0.0, holder_alpha=0.75)


def test_driver_evaluation_deterministic():
    spec = catalog_instance("hyperbolic_discount")
    args = (0.1, 0.6, 0.2, 0.9, -0.3)
    assert spec.driver(*args) == spec.driver(*args)


def test_dynamics_validation():
    with pytest.raises(InstanceError):
        brownian_dynamics(0.0, sigma=0.0)
    with pytest.raises(InstanceError):
        geometric_dynamics(-1.0, sigma=0.2)


@pytest.mark.parametrize("name", CATALOG_NAMES)
def test_catalog_defaults_pass_assumption_check(name):
    report = verify_assumptions(catalog_instance(name), n_steps=50)
    assert report.ok, report.violations


def test_terminal_domination_violation_reported():
    # terminal sits strictly below the obstacle at T: must be flagged
    base = catalog_instance("zero_driver_flat")
    bad = InstanceSpec(
        label="broken_terminal",
        driver=base.driver,
        terminal=TerminalSpec(name="below_floor", fn=lambda t, x: np.full_like(np.asarray(x, float), -1.0e6 - 1.0)),
        obstacle=base.obstacle,
        dynamics=base.dynamics,
        x0=base.x0,
        horizon=base.horizon,
    )
    report = verify_assumptions(bad, n_steps=10)
    assert not report.ok
    assert any(v.kind == "terminal_domination" for v in report.violations)


def test_understated_lipschitz_constant_reported():
    spec = catalog_instance("hyperbolic_discount", {"rho0": 0.5})
    cheat = InstanceSpec(
        label="understated",
        driver=DriverSpec(
            name="hyperbolic_low",
            fn=spec.driver.fn,
            lipschitz=0.25,  # true slope is 0.5 at s = t
            holder_const=spec.driver.holder_const,
            t_dependent=True,
        ),
        terminal=spec.terminal,
        obstacle=spec.obstacle,
        dynamics=spec.dynamics,
        x0=spec.x0,
        horizon=spec.horizon,
    )
    report = verify_assumptions(cheat, n_steps=20, samples=800)
    assert any(v.kind == "lipschitz" for v in report.violations)


def test_shift_helpers_preserve_structure():
    spec = catalog_instance("linear_z")
    up = shift_driver(spec, 0.1)
    assert float(up.driver(0, 1, 0, 0.0, 0.0)) == pytest.approx(0.1)
    assert up.driver.lipschitz == spec.driver.lipschitz

    hi = shift_terminal(spec, 0.2)
    assert float(hi.terminal(0.0, np.array([1.0]))[0]) == pytest.approx(1.2)

    lo = shift_obstacle(spec, -0.3)
    assert float(lo.obstacle(0.0, np.array([1.0]))[0]) == pytest.approx(1.0 - 0.5 - 0.3)


def test_instance_lattice_roundtrip():
    spec = catalog_instance("american_put")
    lat = spec.lattice(4)
    assert lat.n_steps == 4
    assert lat.x[0][0] == pytest.approx(spec.x0)
