"""Problem data for the reflected Volterra equations.

An instance bundles four evaluation maps plus declared regularity
constants:

    driver    f(t, s, x, y, z)      running coefficient, Lipschitz in (y, z)
    terminal  xi(t, x)              anchor-indexed terminal payoff
    obstacle  L(u, x)               lower barrier, must sit below xi at T
    dynamics  x = dyn(t, w)         state as a function of the walk

All maps must be pure and vectorized over node arrays.  Declared
constants (Lipschitz slope c_f, time-increment Holder pair (c_1, alpha))
are trusted by the solvers and spot-checked by ``verify_assumptions``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from rbsvie.grid import Lattice, TimeGrid, build_lattice


class InstanceError(ValueError):
    pass


@dataclass(frozen=True)
class DriverSpec:
    """Running coefficient f(t, s, x, y, z) with declared constants.

    ``lipschitz`` bounds the joint (y, z) slope: |f(..,y,z) - f(..,y',z')|
    <= lipschitz * (|y-y'| + |z-z'|).  ``holder_const`` and
    ``holder_alpha`` bound the first-argument increment
    |f(t',s,..) - f(t,s,..)| <= holder_const * |t'-t|**holder_alpha for
    |y|, |z| <= 1; alpha may not exceed 1/2.
    """

    name: str
    fn: Callable
    lipschitz: float
    holder_const: float = 0.0
    holder_alpha: float = 0.5
    depends_on_y: bool = True
    depends_on_z: bool = True
    monotone_in_y: bool = False
    t_dependent: bool = False

    def __post_init__(self):
        if self.lipschitz < 0 or not np.isfinite(self.lipschitz):
            raise InstanceError(f"lipschitz constant must be finite and >= 0, got {self.lipschitz}")
        if not 0.0 < self.holder_alpha <= 0.5:
            raise InstanceError(f"holder_alpha must lie in (0, 1/2], got {self.holder_alpha}")
        if self.holder_const < 0:
            raise InstanceError("holder_const must be >= 0")

    def __call__(self, t, s, x, y, z):
        return self.fn(t, s, x, y, z)


@dataclass(frozen=True)
class TerminalSpec:
    name: str
    fn: Callable  # (t, x_T) -> value
    t_dependent: bool = False

    def __call__(self, t, x):
        return self.fn(t, x)


@dataclass(frozen=True)
class ObstacleSpec:
    name: str
    fn: Callable  # (u, x) -> value

    def __call__(self, u, x):
        return self.fn(u, x)


@dataclass(frozen=True)
class DynamicsSpec:
    name: str
    fn: Callable  # (t, w) -> x

    def __call__(self, t, w):
        return self.fn(t, w)


@dataclass(frozen=True)
class InstanceSpec:
    """Immutable problem instance."""

    label: str
    driver: DriverSpec
    terminal: TerminalSpec
    obstacle: ObstacleSpec
    dynamics: DynamicsSpec
    x0: float
    horizon: float

    def __post_init__(self):
        if not np.isfinite(self.x0):
            raise InstanceError(f"x0 must be finite, got {self.x0}")
        if not np.isfinite(self.horizon) or self.horizon <= 0:
            raise InstanceError(f"horizon must be positive, got {self.horizon}")

    @property
    def t_dependent(self) -> bool:
        return self.driver.t_dependent or self.terminal.t_dependent

    def lattice(self, n_steps: int) -> Lattice:
        return build_lattice(TimeGrid(self.horizon, n_steps), self.x0, self.dynamics)


# ---------------------------------------------------------------------------
# dynamics families


def brownian_dynamics(x0: float, sigma: float = 1.0) -> DynamicsSpec:
    if sigma <= 0:
        raise InstanceError("sigma must be positive")

    def fn(t, w):
        return x0 + sigma * np.asarray(w, dtype=float)

    return DynamicsSpec(name=f"brownian(x0={x0},sigma={sigma})", fn=fn)


def geometric_dynamics(x0: float, sigma: float, mu: float = 0.0) -> DynamicsSpec:
    if sigma <= 0:
        raise InstanceError("sigma must be positive")
    if x0 <= 0:
        raise InstanceError("geometric dynamics needs x0 > 0")

    def fn(t, w):
        return x0 * np.exp((mu - 0.5 * sigma**2) * t + sigma * np.asarray(w, dtype=float))

    return DynamicsSpec(name=f"geometric(x0={x0},sigma={sigma},mu={mu})", fn=fn)


# ---------------------------------------------------------------------------
# catalog

_FLOOR = -1.0e6  # effectively no obstacle


def _finite_positive(val, key):
    v = float(val)
    if not np.isfinite(v) or v <= 0:
        raise InstanceError(f"{key} must be finite and positive, got {val}")
    return v


def _finite(val, key):
    v = float(val)
    if not np.isfinite(v):
        raise InstanceError(f"{key} must be finite, got {val}")
    return v


def _american_put(p: dict) -> InstanceSpec:
    strike = _finite_positive(p.pop("strike", 1.0), "strike")
    sigma = _finite_positive(p.pop("sigma", 0.2), "sigma")
    rate = _finite(p.pop("rate", 0.05), "rate")
    x0 = _finite_positive(p.pop("x0", 1.0), "x0")
    horizon = _finite_positive(p.pop("horizon", 1.0), "horizon")
    if rate < 0:
        raise InstanceError("rate must be >= 0")

    driver = DriverSpec(
        name=f"discount(rate={rate})",
        fn=lambda t, s, x, y, z: -rate * y,
        lipschitz=rate,
        holder_const=0.0,
        depends_on_y=rate > 0,
        depends_on_z=False,
        monotone_in_y=rate == 0,
        t_dependent=False,
    )
    payoff = lambda u, x: np.maximum(strike - x, 0.0)
    return InstanceSpec(
        label="american_put",
        driver=driver,
        terminal=TerminalSpec(name=f"put_payoff(strike={strike})", fn=lambda t, x: payoff(t, x)),
        obstacle=ObstacleSpec(name=f"put_payoff(strike={strike})", fn=payoff),
        dynamics=geometric_dynamics(x0, sigma, mu=rate),
        x0=x0,
        horizon=horizon,
    )


def _hyperbolic_discount(p: dict) -> InstanceSpec:
    rho0 = _finite(p.pop("rho0", 0.5), "rho0")
    kappa = _finite(p.pop("kappa", 1.0), "kappa")
    scale = _finite(p.pop("terminal_scale", 1.0), "terminal_scale")
    gap = _finite(p.pop("obstacle_gap", 0.1), "obstacle_gap")
    sigma = _finite_positive(p.pop("sigma", 0.4), "sigma")
    x0 = _finite(p.pop("x0", 0.1), "x0")
    horizon = _finite_positive(p.pop("horizon", 1.0), "horizon")
    if rho0 < 0 or kappa < 0:
        raise InstanceError("rho0 and kappa must be >= 0")
    # terminal_scale != 1 or obstacle_gap < 0 can break terminal domination;
    # that is verify_assumptions' job to report, not a construction error

    def fn(t, s, x, y, z):
        return -rho0 / (1.0 + kappa * (s - t)) * y

    driver = DriverSpec(
        name=f"hyperbolic(rho0={rho0},kappa={kappa})",
        fn=fn,
        lipschitz=rho0,
        # calibrated for |y| <= 1: |f(t',..) - f(t,..)| <= rho0 kappa |t'-t|
        holder_const=rho0 * kappa * math.sqrt(max(horizon, 1.0)),
        holder_alpha=0.5,
        depends_on_y=rho0 > 0,
        depends_on_z=False,
        monotone_in_y=rho0 == 0,
        t_dependent=rho0 > 0 and kappa > 0,
    )
    return InstanceSpec(
        label="hyperbolic_discount",
        driver=driver,
        terminal=TerminalSpec(name=f"linear_state(scale={scale})", fn=lambda t, x: scale * x),
        obstacle=ObstacleSpec(name=f"linear_offset(gap={gap})", fn=lambda u, x: x - gap),
        dynamics=brownian_dynamics(x0, sigma),
        x0=x0,
        horizon=horizon,
    )


def _zero_driver_flat(p: dict) -> InstanceSpec:
    x0 = _finite(p.pop("x0", 0.0), "x0")
    sigma = _finite_positive(p.pop("sigma", 1.0), "sigma")
    horizon = _finite_positive(p.pop("horizon", 1.0), "horizon")
    driver = DriverSpec(
        name="zero",
        fn=lambda t, s, x, y, z: np.zeros_like(np.asarray(y, dtype=float)),
        lipschitz=0.0,
        depends_on_y=False,
        depends_on_z=False,
        monotone_in_y=True,
        t_dependent=False,
    )
    return InstanceSpec(
        label="zero_driver_flat",
        driver=driver,
        terminal=TerminalSpec(name="linear_state(scale=1.0)", fn=lambda t, x: np.asarray(x, dtype=float) + 0.0),
        obstacle=ObstacleSpec(name="floor(-1e6)", fn=lambda u, x: np.full_like(np.asarray(x, dtype=float), _FLOOR)),
        dynamics=brownian_dynamics(x0, sigma),
        x0=x0,
        horizon=horizon,
    )


def _linear_z(p: dict) -> InstanceSpec:
    a = _finite(p.pop("a", 0.25), "a")
    b = _finite(p.pop("b", 0.25), "b")
    gap = _finite(p.pop("obstacle_gap", 0.5), "obstacle_gap")
    x0 = _finite(p.pop("x0", 0.0), "x0")
    sigma = _finite_positive(p.pop("sigma", 1.0), "sigma")
    horizon = _finite_positive(p.pop("horizon", 1.0), "horizon")

    driver = DriverSpec(
        name=f"linear_z(a={a},b={b})",
        fn=lambda t, s, x, y, z: a * z + b * y,
        lipschitz=abs(a) + abs(b),
        depends_on_y=b != 0,
        depends_on_z=a != 0,
        monotone_in_y=b >= 0,
        t_dependent=False,
    )
    return InstanceSpec(
        label="linear_z",
        driver=driver,
        terminal=TerminalSpec(name="linear_state(scale=1.0)", fn=lambda t, x: np.asarray(x, dtype=float) + 0.0),
        obstacle=ObstacleSpec(name=f"linear_offset(gap={gap})", fn=lambda u, x: x - gap),
        dynamics=brownian_dynamics(x0, sigma),
        x0=x0,
        horizon=horizon,
    )


def _custom_affine(p: dict) -> InstanceSpec:
    const = _finite(p.pop("const", 0.0), "const")
    y_coef = _finite(p.pop("y_coef", 0.2), "y_coef")
    z_coef = _finite(p.pop("z_coef", 0.2), "z_coef")
    t_coef = _finite(p.pop("t_coef", 0.3), "t_coef")
    gap = _finite(p.pop("obstacle_gap", 0.4), "obstacle_gap")
    x0 = _finite_positive(p.pop("x0", 1.0), "x0")
    sigma = _finite_positive(p.pop("sigma", 0.3), "sigma")
    horizon = _finite_positive(p.pop("horizon", 1.0), "horizon")

    def fn(t, s, x, y, z):
        return const + y_coef * y + z_coef * z + t_coef * (s - t)

    driver = DriverSpec(
        name=f"affine(const={const},y={y_coef},z={z_coef},t={t_coef})",
        fn=fn,
        lipschitz=abs(y_coef) + abs(z_coef),
        holder_const=abs(t_coef) * math.sqrt(max(horizon, 1.0)),
        holder_alpha=0.5,
        depends_on_y=y_coef != 0,
        depends_on_z=z_coef != 0,
        monotone_in_y=y_coef >= 0,
        t_dependent=t_coef != 0,
    )
    return InstanceSpec(
        label="custom_affine",
        driver=driver,
        terminal=TerminalSpec(name="linear_state(scale=1.0)", fn=lambda t, x: np.asarray(x, dtype=float) + 0.0),
        obstacle=ObstacleSpec(name=f"linear_offset(gap={gap})", fn=lambda u, x: x - gap),
        dynamics=geometric_dynamics(x0, sigma, mu=0.0),
        x0=x0,
        horizon=horizon,
    )


_CATALOG = {
    "american_put": _american_put,
    "hyperbolic_discount": _hyperbolic_discount,
    "zero_driver_flat": _zero_driver_flat,
    "linear_z": _linear_z,
    "custom_affine": _custom_affine,
}

CATALOG_NAMES = tuple(sorted(_CATALOG))


def catalog_instance(name: str, overrides: Optional[dict] = None) -> InstanceSpec:
    """Build a named catalog instance, optionally overriding parameters.

    Unknown names and unknown or out-of-range parameters raise
    InstanceError.
    """
    if name not in _CATALOG:
        raise InstanceError(f"unknown instance '{name}'; known: {', '.join(CATALOG_NAMES)}")
    params = dict(overrides or {})
    spec = _CATALOG[name](params)
    if params:
        raise InstanceError(f"unknown parameters for '{name}': {', '.join(sorted(params))}")
    return spec


# ---------------------------------------------------------------------------
# derived-instance helpers (used by the comparison machinery and tests)


def shift_driver(spec: InstanceSpec, c: float) -> InstanceSpec:
    """Instance with driver f + c.  Slopes and dependence flags unchanged."""
    base = spec.driver

    def fn(t, s, x, y, z, _f=base.fn, _c=c):
        return _f(t, s, x, y, z) + _c

    driver = replace(base, name=f"{base.name}+{c}", fn=fn,
                     depends_on_y=base.depends_on_y,
                     depends_on_z=base.depends_on_z)
    return replace(spec, label=f"{spec.label}[f+{c}]", driver=driver)


def shift_terminal(spec: InstanceSpec, c: float) -> InstanceSpec:
    """Instance with terminal xi + c (c >= 0 keeps the terminal above the obstacle)."""
    base = spec.terminal

    def fn(t, x, _f=base.fn, _c=c):
        return _f(t, x) + _c

    return replace(spec, label=f"{spec.label}[xi+{c}]",
                   terminal=TerminalSpec(name=f"{base.name}+{c}", fn=fn, t_dependent=base.t_dependent))


def shift_obstacle(spec: InstanceSpec, c: float) -> InstanceSpec:
    """Instance with obstacle L + c (use c <= 0 to preserve terminal domination)."""
    base = spec.obstacle

    def fn(u, x, _f=base.fn, _c=c):
        return _f(u, x) + _c

    return replace(spec, label=f"{spec.label}[L+{c}]",
                   obstacle=ObstacleSpec(name=f"{base.name}+{c}", fn=fn))


# ---------------------------------------------------------------------------
# assumption verification


@dataclass(frozen=True)
class Violation:
    kind: str
    detail: str
    witness: tuple


@dataclass(frozen=True)
class AssumptionReport:
    instance: str
    n_steps: int
    samples: int
    lipschitz_ratio: float
    holder_ratio: float
    violations: tuple

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_assumptions(spec: InstanceSpec, n_steps: int = 50, samples: int = 400,
                       seed: int = 20260825) -> AssumptionReport:
    """Spot-check the declared regularity of an instance on its lattice.

    Checks, with randomized sampling where exhaustion is impossible:

    * terminal domination: xi(t_i, x_T) >= L(T, x_T) at every terminal
      node, for every anchor time (exhaustive);
    * Lipschitz: |f(t,s,x,y,z) - f(t,s,x,y',z')| <= c_f (|dy| + |dz|),
      within 1 percent, sampled;
    * time-increment Holder: |f(t',s,..) - f(t,s,..)| <= c_1 |t'-t|^alpha
      for |y|, |z| <= 1, within 1 percent, sampled;
    * finiteness of f(t,s,x,0,0), xi and L on lattice nodes.

    Report-only: violations are collected, never raised.
    """
    lat = spec.lattice(n_steps)
    grid = lat.grid
    T = spec.horizon
    rng = np.random.default_rng(seed)
    violations = []

    xT = lat.x[n_steps]
    LT = np.asarray(spec.obstacle(T, xT), dtype=float)
    if not np.all(np.isfinite(LT)):
        violations.append(Violation("finiteness", "obstacle non-finite at terminal layer", (n_steps,)))
    for i in range(n_steps + 1):
        xi_vals = np.asarray(spec.terminal(grid.t(i), xT), dtype=float)
        if not np.all(np.isfinite(xi_vals)):
            violations.append(Violation("finiteness", f"terminal non-finite at anchor {i}", (i,)))
            continue
        bad = np.flatnonzero(xi_vals < LT - 1e-12)
        if bad.size:
            k = int(bad[0])
            violations.append(Violation(
                "terminal_domination",
                f"xi(t_{i}, x) = {xi_vals[k]:.6g} < L(T, x) = {LT[k]:.6g} at terminal node {k}",
                (i, k),
            ))

    all_nodes = [(j, k) for j in range(n_steps + 1) for k in range(j + 1)]
    idx = rng.integers(0, len(all_nodes), size=samples)
    lip_max = 0.0
    hol_max = 0.0
    cf = spec.driver.lipschitz
    c1 = spec.driver.holder_const
    alpha = spec.driver.holder_alpha
    for m in range(samples):
        j, k = all_nodes[idx[m]]
        x = float(lat.x[j][k])
        t, tp = sorted(rng.uniform(0.0, T, size=2))
        s = rng.uniform(tp, T)
        y, yp, z, zp = rng.uniform(-1.0, 1.0, size=4)
        f0 = float(spec.driver(t, s, x, y, z))
        if not np.isfinite(f0):
            violations.append(Violation("finiteness", f"driver non-finite at sample {m}", (j, k)))
            continue
        denom = abs(y - yp) + abs(z - zp)
        if denom > 1e-12:
            lip = abs(f0 - float(spec.driver(t, s, x, yp, zp))) / denom
            lip_max = max(lip_max, lip)
            if lip > cf * 1.01 + 1e-12:
                violations.append(Violation(
                    "lipschitz",
                    f"observed (y,z)-slope {lip:.6g} exceeds declared {cf:.6g}",
                    (t, s, x, y, z, yp, zp),
                ))
        if tp - t > 1e-10:
            hol = abs(float(spec.driver(tp, s, x, y, z)) - f0) / (tp - t) ** alpha
            hol_max = max(hol_max, hol)
            if hol > c1 * 1.01 + 1e-12:
                violations.append(Violation(
                    "holder",
                    f"observed time-increment ratio {hol:.6g} exceeds declared {c1:.6g}",
                    (t, tp, s, x, y, z),
                ))

    for j in (0, n_steps // 2, n_steps):
        xj = lat.x[j]
        u = grid.t(j)
        if not np.all(np.isfinite(np.asarray(spec.obstacle(u, xj), dtype=float))):
            violations.append(Violation("finiteness", f"obstacle non-finite at layer {j}", (j,)))
        if not np.all(np.isfinite(np.asarray(spec.driver(0.0, u if u > 0 else T, xj,
                                                         np.zeros_like(xj), np.zeros_like(xj)), dtype=float))):
            violations.append(Violation("finiteness", f"driver non-finite on layer {j} at (y,z)=(0,0)", (j,)))

    return AssumptionReport(
        instance=spec.label,
        n_steps=n_steps,
        samples=samples,
        lipschitz_ratio=lip_max,
        holder_ratio=hol_max,
        violations=tuple(violations),
    )
