"""Material models, stress measures, BVP definitions and analytical solutions.

All constitutive functions accept either float64 numpy values or recorded
Vars, so the same formulas serve reports and taped loss functions. The 1D bar
lives on [-1, 1] and is clamped at the left end; the 2D plate is clamped at
its left edge.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad


def _is_var(x):
    return isinstance(x, ad.Var)


def _log(x):
    return ad.log(x) if _is_var(x) else np.log(x)


def _sqrt_clamped(x):
    if _is_var(x):
        return (ad.relu(x)) ** 0.5
    return np.sqrt(np.maximum(x, 0.0))


def _raw(x):
    return x.value if _is_var(x) else np.asarray(x)


# ---------------------------------------------------------------------------
# 1D materials
# ---------------------------------------------------------------------------


@dataclass
class Material1D:
    tag: str  # nonlinear-A | linear
    modulus: float = 1.0  # E, used by the linear law
    area: float = 1.0

    def __post_init__(self):
        if self.modulus <= 0 or self.area <= 0:
            raise ValueError("modulus and area must be positive")


def energy_1d(material: Material1D, f_or_strain):
    """Strain-energy density.

    nonlinear-A takes the stretch F = 1 + u' (must be positive) and returns
    F**1.5 - 1.5 F + 0.5; the linear law takes the strain u' and returns
    0.5 E A u'^2.
    """
    if material.tag == "nonlinear-A":
        _check_stretch(f_or_strain)
        F = f_or_strain
        return F**1.5 - 1.5 * F + 0.5
    if material.tag == "linear":
        e = f_or_strain
        return 0.5 * material.modulus * material.area * e * e
    raise ValueError(f"unknown material {material.tag!r}")


def stress_1d(material: Material1D, f_or_strain):
    """dW/dF: 1.5 (sqrt(F) - 1) for nonlinear-A, E A u' for linear."""
    if material.tag == "nonlinear-A":
        _check_stretch(f_or_strain)
        return 1.5 * (f_or_strain**0.5 - 1.0)
    if material.tag == "linear":
        return material.modulus * material.area * f_or_strain
    raise ValueError(f"unknown material {material.tag!r}")


def _check_stretch(F):
    if np.any(_raw(F) <= 0.0):
        raise ad.AdError("nonlinear-A material needs stretch F > 0")


# ---------------------------------------------------------------------------
# Neo-Hookean plane strain
# ---------------------------------------------------------------------------


@dataclass
class NeoHookean:
    mu: float
    lam: float

    def __post_init__(self):
        if self.mu <= 0 or self.lam < 0:
            raise ValueError("need mu > 0 and lambda >= 0")

    @classmethod
    def from_youngs(cls, E, nu):
        return cls(mu=E / (2.0 * (1.0 + nu)), lam=E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)))


def neo_hookean_fields(nh: NeoHookean, grad_u):
    """Kinematic and stress fields from the 2x2 displacement gradient.

    ``grad_u`` is (ux_x, ux_y, uy_x, uy_y), each a scalar/array/Var. Returns a
    dict with F.., J, I1, W, P.., S.. and the equivalent stress SE.

    W = mu/2 (I1 - 2) - mu ln J + lambda/2 (ln J)^2, so that
    P = dW/dF = mu F + (lambda ln J - mu) F^-T and S = F^-1 P.
    """
    ux_x, ux_y, uy_x, uy_y = grad_u
    Fxx, Fxy = 1.0 + ux_x, ux_y
    Fyx, Fyy = uy_x, 1.0 + uy_y
    J = Fxx * Fyy - Fxy * Fyx
    if np.any(_raw(J) <= 0.0):
        raise ad.AdError("inverted element: det F <= 0")
    I1 = Fxx * Fxx + Fxy * Fxy + Fyx * Fyx + Fyy * Fyy
    lnJ = _log(J)
    mu, lam = nh.mu, nh.lam
    W = 0.5 * mu * (I1 - 2.0) - mu * lnJ + 0.5 * lam * lnJ * lnJ

    c = (lam * lnJ - mu) / J  # (lam ln J - mu) F^-T = c * adj(F)^T
    Pxx = mu * Fxx + c * Fyy
    Pxy = mu * Fxy - c * Fyx
    Pyx = mu * Fyx - c * Fxy
    Pyy = mu * Fyy + c * Fxx

    # S = mu I + (lam ln J - mu) C^-1, with C = F^T F
    Cxx = Fxx * Fxx + Fyx * Fyx
    Cxy = Fxx * Fxy + Fyx * Fyy
    Cyy = Fxy * Fxy + Fyy * Fyy
    c2 = (lam * lnJ - mu) / (J * J)
    Sxx = mu + c2 * Cyy
    Sxy = -c2 * Cxy
    Syy = mu + c2 * Cxx

    SE = equivalent_stress(Sxx, Syy, Sxy)
    return {
        "Fxx": Fxx, "Fxy": Fxy, "Fyx": Fyx, "Fyy": Fyy,
        "J": J, "I1": I1, "W": W,
        "Pxx": Pxx, "Pxy": Pxy, "Pyx": Pyx, "Pyy": Pyy,
        "Sxx": Sxx, "Sxy": Sxy, "Syy": Syy, "SE": SE,
    }


def equivalent_stress(Sxx, Syy, Sxy):
    """sqrt(0.5((Sxx-Syy)^2 + Sxx^2 + Syy^2) + 3 Sxy).

    The last term is linear (not squared); its argument can dip below zero
    near traction-free boundaries, where it is clamped at zero.
    """
    arg = 0.5 * ((Sxx - Syy) * (Sxx - Syy) + Sxx * Sxx + Syy * Syy) + 3.0 * Sxy
    return _sqrt_clamped(arg)


# ---------------------------------------------------------------------------
# boundary value problems
# ---------------------------------------------------------------------------


@dataclass
class BvpSpec:
    """One boundary-value problem: domain, material, loads, boundary data."""

    name: str
    domain: tuple  # (a, b) or ((ax, bx), (ay, by))
    material: object
    body_force: object = None  # callable f(X) (1D) or constant vector (2D)
    traction: object = 0.0  # scalar T (1D right end) or (tx, ty) on the right edge
    dirichlet: str = "left-clamped"
    extra: dict = field(default_factory=dict)


def example_a() -> BvpSpec:
    return BvpSpec(
        name="a",
        domain=(-1.0, 1.0),
        material=Material1D("nonlinear-A"),
        body_force=lambda X: X,
        traction=0.0,
    )


B1_Q = 9.395e4
B1_T = 1.015e8
B1_E = 210e9
B1_A = 1.0


def example_b1() -> BvpSpec:
    mat = Material1D("linear", modulus=B1_E, area=B1_A)
    return BvpSpec(
        name="b1",
        domain=(-1.0, 1.0),
        material=mat,
        body_force=lambda X: B1_Q * B1_A * np.ones_like(np.asarray(X, dtype=np.float64)),
        traction=B1_T,
    )


def example_b2(pi2=0.0, force=None) -> BvpSpec:
    """Dimensionless linear bar: -u'' = f, u(-1) = 0, u'(1) = pi2 (f defaults to 1)."""
    if force is None:
        force = lambda X: np.ones_like(np.asarray(X, dtype=np.float64))
    return BvpSpec(
        name="b2",
        domain=(-1.0, 1.0),
        material=Material1D("linear"),
        body_force=force,
        traction=float(pi2),
    )


def example_c(load=(0.0, -5.0), E=1000.0, nu=0.3, size=(4.0, 1.0)) -> BvpSpec:
    """Neo-Hookean plate [0,Lx]x[0,Ly], left edge clamped, right edge traction."""
    return BvpSpec(
        name="c",
        domain=((0.0, size[0]), (0.0, size[1])),
        material=NeoHookean.from_youngs(E, nu),
        body_force=(0.0, 0.0),
        traction=tuple(load),
    )


def example_c1():
    return example_c(load=(0.0, -5.0))


def example_c2():
    return example_c(load=(50.0, 0.0))


# ---------------------------------------------------------------------------
# analytical solutions
# ---------------------------------------------------------------------------


def analytic_a(X):
    """Displacement and strain of the nonlinear bar under f(X) = X, T = 0."""
    X = np.asarray(X, dtype=np.float64)
    u = (3.0 * X**5 - 40.0 * X**3 + 105.0 * X + 68.0) / 135.0
    du = (X**4 - 8.0 * X**2 + 7.0) / 9.0
    return u, du


def analytic_b1(X):
    X = np.asarray(X, dtype=np.float64)
    qa = B1_Q * B1_A
    c1 = (B1_T + qa) / B1_E
    c2 = qa / (2.0 * B1_E) + c1
    return -qa / (2.0 * B1_E) * X**2 + c1 * X + c2


def analytic_b1_strain(X):
    X = np.asarray(X, dtype=np.float64)
    qa = B1_Q * B1_A
    return -qa / B1_E * X + (B1_T + qa) / B1_E


def analytic_b2_neumann(X, pi2):
    """u = 3/2 + X - X^2/2 + pi2 (X+1), solving -u'' = 1, u(-1)=0, u'(1)=pi2."""
    X = np.asarray(X, dtype=np.float64)
    return 1.5 + X - 0.5 * X**2 + pi2 * (X + 1.0)


def analytic_b2_neumann_strain(X, pi2):
    X = np.asarray(X, dtype=np.float64)
    return 1.0 - X + pi2 * np.ones_like(X)


# ---------------------------------------------------------------------------
# strong-form residuals (accept Vars or arrays)
# ---------------------------------------------------------------------------


def residual_a(X, du, d2u):
    """-(3/4) (1+u')^{-1/2} u'' - X for the nonlinear bar."""
    F = 1.0 + du
    _check_stretch(F)
    return -0.75 * F**-0.5 * d2u - X


def residual_b2(X, d2u, f):
    """-u'' - f for the dimensionless linear bar."""
    fx = f(_raw(X)) if callable(f) else f
    return -d2u - fx
