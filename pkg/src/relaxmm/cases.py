"""Benchmark problems as manufactured solutions, plus a finite-difference oracle.

Every field is a callable ``(x, y, params)`` that broadcasts over arrays and
works in extended precision (``np.longdouble``) so the oracle can use small
difference steps. Vector fields carry a trailing axis of length 2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .assembly import MaterialParams
from .mesh import QuadMesh, generate_structured, perturb_interior, tag_region

Field = Callable[..., np.ndarray]


def _vec(a, b) -> np.ndarray:
    a, b = np.broadcast_arrays(a, b)
    return np.stack([a, b], axis=-1)


def _zero(x, y, p=None):
    return np.zeros_like(np.asarray(x) + np.asarray(y))


def _zero_vec(x, y, p=None):
    z = _zero(x, y)
    return _vec(z, z)


@dataclass(frozen=True)
class BenchmarkCase:
    """Exact fields, loads and boundary data of one benchmark.

    ``u_dirichlet``/``zeta_dirichlet`` name mesh tags; interior constraint
    lines listed in ``lines`` (tag → x position) are added by ``prepare_mesh``.
    ``zeta_values`` is ``"exact"`` (tangential trace of ``zeta_bc``) or
    ``"consistent"`` (tangential trace of ``grad_u_bc``). ``zeta_components``
    set to ``"full"`` prescribes both ζ components at nodal boundary dofs.
    """

    name: str
    domain: tuple[float, float, float, float]
    params: MaterialParams
    f: Field
    omega: Field
    u_exact: Field | None = None
    grad_u_exact: Field | None = None
    zeta_exact: Field | None = None
    curl_zeta_exact: Field | None = None
    moment_exact: Field | None = None
    u_boundary: Field | None = None
    grad_u_boundary: Field | None = None
    zeta_boundary: Field | None = None
    u_dirichlet: tuple[str, ...] = ("boundary",)
    zeta_dirichlet: tuple[str, ...] = ("boundary",)
    zeta_values: str = "exact"
    zeta_components: str = "tangential"
    lines: dict = field(default_factory=dict)
    kinks: tuple[float, ...] = ()
    extras: dict = field(default_factory=dict)
    description: str = ""

    @property
    def has_exact(self) -> bool:
        return self.u_exact is not None and self.zeta_exact is not None

    def u_bc(self, x, y, p):
        fn = self.u_boundary or self.u_exact or _zero
        return fn(x, y, p)

    def zeta_bc(self, x, y, p):
        fn = self.zeta_boundary or self.zeta_exact or _zero_vec
        return fn(x, y, p)

    def grad_u_bc(self, x, y, p):
        fn = self.grad_u_boundary or self.grad_u_exact
        if fn is None:
            return _fd_grad(lambda a, b: self.u_bc(a, b, p), x, y, 1e-5)
        return fn(x, y, p)

    def prepare_mesh(self, mesh: QuadMesh) -> QuadMesh:
        """Add interior constraint-line tags and kink-line tags.

        Kink tags impose nothing; they keep the line fixed under perturbation.
        """
        lines = dict(self.lines)
        for i, k in enumerate(self.kinks):
            if k not in lines.values():
                lines[f"kink_{i}"] = k
        for tag, x0 in lines.items():
            tol = 1e-9 * max(1.0, abs(x0))
            if not np.any(np.abs(mesh.nodes[:, 0] - x0) <= tol):
                continue
            mesh = tag_region(mesh, tag, lambda x, y, x0=x0, tol=tol: abs(x - x0) <= tol)
        return mesh

    def mesh(self, nx: int, ny: int | None = None, perturb: float = 0.0,
             seed: int = 0) -> QuadMesh:
        """Structured mesh of the case domain with constraint tags, optionally perturbed."""
        m = self.prepare_mesh(generate_structured(nx, ny or nx, self.domain))
        if perturb:
            m = perturb_interior(m, perturb, seed)
        return m

    def with_params(self, **kw) -> "BenchmarkCase":
        return replace(self, params=replace(self.params, **kw))


# ------------------------------------------------------------- imposed fields
def _vanishing_zeta() -> BenchmarkCase:
    return BenchmarkCase(
        name="bench_vanishing_zeta",
        domain=(-4.0, 4.0, -4.0, 4.0),
        params=MaterialParams(1.0, 1.0, 1.0, 1.0),
        u_exact=lambda x, y, p: 4 - x ** 2 / 8 - y ** 2 / 8 + x * y,
        grad_u_exact=lambda x, y, p: _vec(-x / 4 + y, -y / 4 + x),
        zeta_exact=_zero_vec,
        curl_zeta_exact=_zero,
        f=lambda x, y, p: 1.0 + _zero(x, y),
        omega=lambda x, y, p: _vec(x / 2 - 2 * y, y / 2 - 2 * x),
        description="imposed vanishing microdistortion",
    )


def _rotation() -> BenchmarkCase:
    def g(x, y):
        return (x ** 2 / 8 - 2) * (y ** 2 / 8 - 2)

    return BenchmarkCase(
        name="bench_rotation",
        domain=(-4.0, 4.0, -4.0, 4.0),
        params=MaterialParams(1.0, 1.0, 1.0, 1.0),
        u_exact=lambda x, y, p: x * y * (y ** 2 / 16 - x ** 2 / 16) - 1,
        grad_u_exact=lambda x, y, p: _vec((y ** 3 - 3 * x ** 2 * y) / 16,
                                          (3 * x * y ** 2 - x ** 3) / 16),
        zeta_exact=lambda x, y, p: _vec(-y * g(x, y), x * g(x, y)),
        curl_zeta_exact=lambda x, y, p: 3 * x ** 2 * y ** 2 / 32 - x ** 2 - y ** 2 + 8,
        f=lambda x, y, p: -(x * y / 2) * (y ** 2 / 8 - x ** 2 / 8),
        omega=lambda x, y, p: _vec(
            -(x ** 2 * y ** 3) / 16 + (25 * x ** 2 * y) / 16 + (7 * y ** 3) / 8 - 18 * y,
            (x ** 3 * y ** 2) / 16 - (7 * x ** 3) / 8 - (25 * x * y ** 2) / 16 + 18 * x),
        description="non-vanishing rotation-type microdistortion",
    )


def _tent() -> BenchmarkCase:
    def u(x, y, p):
        x = np.asarray(x) + 0 * np.asarray(y)
        return np.select([x <= -2, x <= 0, x <= 2], [-4 - x, 2 + 2 * x, 2 - 2 * x], x - 4)

    def slope(x):
        return np.select([x <= -2, x <= 0, x <= 2], [-1.0, 2.0, -2.0], 1.0)

    def grad(x, y, p):
        x = np.asarray(x) + 0 * np.asarray(y)
        return _vec(slope(x), 0 * x)

    return BenchmarkCase(
        name="tent",
        domain=(-4.0, 4.0, -4.0, 4.0),
        params=MaterialParams(1.0, 1.0, 1.0, 1.0),
        u_exact=u,
        grad_u_exact=grad,
        zeta_exact=lambda x, y, p: grad(x, y, p) / 2,
        curl_zeta_exact=_zero,
        f=_zero,
        omega=_zero_vec,
        u_dirichlet=("boundary", "line_m2", "line_0", "line_p2"),
        zeta_dirichlet=(),
        lines={"line_m2": -2.0, "line_0": 0.0, "line_p2": 2.0},
        kinks=(-2.0, 0.0, 2.0),
        description="piecewise linear tent with interior displacement lines",
    )


def _kink() -> BenchmarkCase:
    def u(x, y, p):
        e = np.exp(1 - x) * y * (1 - y)
        return np.where(x <= 0.5, x, 1 - x) * e

    def grad(x, y, p):
        e = np.exp(1 - x)
        Y = y * (1 - y)
        left = x <= 0.5
        ux = np.where(left, 1 - x, x - 2) * e * Y
        uy = np.where(left, x, 1 - x) * e * (1 - 2 * y)
        return _vec(ux, uy)

    return BenchmarkCase(
        name="kink",
        domain=(0.0, 1.0, 0.0, 1.0),
        params=MaterialParams(1.0, 1.0, 1.0, 1.0),
        u_exact=u,
        grad_u_exact=grad,
        zeta_exact=grad,
        curl_zeta_exact=_zero,
        f=_zero,
        omega=lambda x, y, p: 2 * grad(x, y, p),
        u_boundary=_zero,
        zeta_boundary=_zero_vec,
        kinks=(0.5,),
        description="gradient field with a normal jump across x = 0.5",
    )


def _lc_zero() -> BenchmarkCase:
    return BenchmarkCase(
        name="lc_zero",
        domain=(-5.0, 5.0, -5.0, 5.0),
        params=MaterialParams(1.0, 1.0, 1.0, 0.0),
        u_exact=lambda x, y, p: 2 + np.cos(2 * x) + np.cos(2 * y),
        grad_u_exact=lambda x, y, p: _vec(-2 * np.sin(2 * x), -2 * np.sin(2 * y)),
        zeta_exact=lambda x, y, p: (p.mu_e / (p.mu_e + p.mu_micro))
        * _vec(-2 * np.sin(2 * x), -2 * np.sin(2 * y)),
        curl_zeta_exact=_zero,
        f=lambda x, y, p: 4 * (np.cos(2 * x) + np.cos(2 * y)),
        omega=_zero_vec,
        zeta_dirichlet=(),
        description="vanishing characteristic length (Poisson limit)",
    )


# --------------------------------------------------------------- robustness
_PI = math.pi


def _rb_parts(x, y):
    a = _PI * x / 8
    E = np.exp((x + y) / 100)
    Y = y ** 2 - 16
    ca, sa = np.cos(a), np.sin(a)
    u = ca * Y * E
    ux = Y * E * (-_PI / 8 * sa + ca / 100)
    uy = ca * E * (2 * y + Y / 100)
    uxx = E * Y * (ca * (1 / 10000 - _PI ** 2 / 64) - (_PI / 400) * sa)
    uyy = ca * E * (2 + 4 * y / 100 + Y / 10000)
    return u, ux, uy, uxx + uyy


def _rb_g(x, y):
    return (x ** 2 / 8 - 2) * (y ** 2 / 8 - 2)


def _rb_zeta0(x, y):
    return 2 * _vec(x * (y ** 2 - 16), y * (x ** 2 - 16))


def _rb_v(x, y):
    g = _rb_g(x, y)
    return _vec(-y * g, x * g)


def _rb_curl_v(x, y):
    return 3 * x ** 2 * y ** 2 / 32 - x ** 2 - y ** 2 + 8


def _rb_dc_curl_v(x, y):
    return _vec(y * (3 * x ** 2 - 32) / 16, -x * (3 * y ** 2 - 32) / 16)


def _inv_lc2(p: MaterialParams) -> float:
    return 0.0 if math.isinf(p.L_c) else 1.0 / p.L_c ** 2


def _robustness(limit: bool) -> BenchmarkCase:
    inv = (lambda p: 0.0) if limit else _inv_lc2

    def zeta(x, y, p):
        return _rb_zeta0(x, y) + inv(p) * _rb_v(x, y)

    def f(x, y, p):
        _, _, _, lap = _rb_parts(x, y)
        div0 = 2 * (x ** 2 + y ** 2 - 32)
        divv = x * y * (x ** 2 - y ** 2) / 32
        return -2 * p.mu_e * (lap - div0 - inv(p) * divv)

    def omega(x, y, p):
        _, ux, uy, _ = _rb_parts(x, y)
        z = zeta(x, y, p)
        return (-2 * p.mu_e * (_vec(ux, uy) - z) + 2 * p.mu_micro * z
                + p.mu_macro * _rb_dc_curl_v(x, y))

    name = "robustness_limit" if limit else "robustness"
    return BenchmarkCase(
        name=name,
        domain=(-4.0, 4.0, -4.0, 4.0),
        params=MaterialParams(1.0, 1.0, 1.0, math.inf if limit else 1.0),
        u_exact=lambda x, y, p: _rb_parts(x, y)[0],
        grad_u_exact=lambda x, y, p: _vec(*_rb_parts(x, y)[1:3]),
        zeta_exact=zeta,
        curl_zeta_exact=lambda x, y, p: inv(p) * _rb_curl_v(x, y),
        moment_exact=lambda x, y, p: p.mu_macro * _rb_curl_v(x, y),
        f=f,
        omega=omega,
        u_boundary=_zero,
        zeta_boundary=_zero_vec,
        description=("L_c-independent limit loads with exact fields (ũ, ζ₀)" if limit
                     else "L_c-parametrized manufactured solution"),
    )


def _grad_limit() -> BenchmarkCase:
    def r(x, y, p=None):
        return (16 - x ** 2) * (16 - y ** 2) * (x * y - y ** 2)

    def psi(x, y, p=None):
        return x ** 3 * y ** 2 - x * y ** 2 * (1 - x) - 256 / 9

    def omega(x, y, p):
        rx = -2 * x * (16 - y ** 2) * (x * y - y ** 2) + (16 - x ** 2) * (16 - y ** 2) * y
        ry = (-2 * y * (16 - x ** 2) * (x * y - y ** 2)
              + (16 - x ** 2) * (16 - y ** 2) * (x - 2 * y))
        px = 3 * x ** 2 * y ** 2 - y ** 2 + 2 * x * y ** 2
        py = 2 * x ** 3 * y - 2 * x * y + 2 * x ** 2 * y
        return _vec(rx + py, ry - px)

    return BenchmarkCase(
        name="grad_limit",
        domain=(-4.0, 4.0, -4.0, 4.0),
        params=MaterialParams(1.0, 1.0, 1.0, 1.0),
        f=_zero,
        omega=omega,
        u_boundary=_zero,
        zeta_boundary=_zero_vec,
        extras={"r": r, "Psi": psi},
        description="gradient-plus-rotation moment driving ∇u − ζ → 0",
    )


def _coupling() -> BenchmarkCase:
    return BenchmarkCase(
        name="coupling",
        domain=(-4.0, 4.0, -4.0, 4.0),
        params=MaterialParams(1.0, 1.0, 1.0, 1.0),
        f=_zero,
        omega=lambda x, y, p: _vec(-y, x),
        u_boundary=lambda x, y, p: y ** 2 - x ** 2,
        grad_u_boundary=lambda x, y, p: _vec(-2 * x, 2 * y),
        zeta_values="consistent",
        description="consistent coupling of ζ to the prescribed displacement",
    )


_BUILDERS = {
    "bench_vanishing_zeta": _vanishing_zeta,
    "bench_rotation": _rotation,
    "tent": _tent,
    "kink": _kink,
    "lc_zero": _lc_zero,
    "robustness": lambda: _robustness(False),
    "robustness_limit": lambda: _robustness(True),
    "grad_limit": _grad_limit,
    "coupling": _coupling,
}


def registry() -> list[BenchmarkCase]:
    """All benchmark cases in a fixed order."""
    return [b() for b in _BUILDERS.values()]


def get_case(name: str) -> BenchmarkCase:
    try:
        return _BUILDERS[name]()
    except KeyError:
        raise KeyError(f"unknown case {name!r}; available: {', '.join(_BUILDERS)}") from None


def case_names() -> list[str]:
    return list(_BUILDERS)


# ------------------------------------------------------------------- oracle
def _d(fn, x, y, h, axis):
    """Fourth-order central difference of ``fn`` along ``axis`` (0 → x, 1 → y)."""
    dx, dy = (h, 0) if axis == 0 else (0, h)
    return (-fn(x + 2 * dx, y + 2 * dy) + 8 * fn(x + dx, y + dy)
            - 8 * fn(x - dx, y - dy) + fn(x - 2 * dx, y - 2 * dy)) / (12 * h)


def _fd_grad(fn, x, y, h):
    return _vec(_d(fn, x, y, h, 0), _d(fn, x, y, h, 1))


def _fd_curl(vf, x, y, h):
    return _d(lambda a, b: vf(a, b)[..., 1], x, y, h, 0) - _d(lambda a, b: vf(a, b)[..., 0], x, y, h, 1)


def _fd_div(vf, x, y, h):
    return _d(lambda a, b: vf(a, b)[..., 0], x, y, h, 0) + _d(lambda a, b: vf(a, b)[..., 1], x, y, h, 1)


def _fd_dc(fn, x, y, h):
    """Dc(q) = (∂y q, −∂x q)."""
    return _vec(_d(fn, x, y, h, 1), -_d(fn, x, y, h, 0))


def sample_points(case: BenchmarkCase, n: int, margin: float, seed: int = 0):
    """Seeded interior points at least ``margin`` away from the boundary and kink lines."""
    rng = np.random.default_rng(seed)
    x0, x1, y0, y1 = case.domain
    pts = []
    while len(pts) < n:
        x = rng.uniform(x0 + margin, x1 - margin)
        y = rng.uniform(y0 + margin, y1 - margin)
        if any(abs(x - k) < margin for k in case.kinks):
            continue
        pts.append((x, y))
    a = np.array(pts, dtype=np.longdouble)
    return a[:, 0], a[:, 1]


def strong_residual_check(case: BenchmarkCase, params: MaterialParams | None = None,
                          n_samples: int = 100, fd_step: float = 1e-4,
                          seed: int = 0) -> tuple[float, float]:
    """Largest residuals of the strong equations at random interior points.

    Returns ``(r1, r2)`` with

    * r1 = max |−2μe div(∇ũ − ζ̃) − f|
    * r2 = max ‖−2μe(∇ũ − ζ̃) + 2μmi ζ̃ + μma Lc² Dc(curl ζ̃) − ω‖

    computed from the exact fields by finite differences in extended
    precision. For ``L_c = inf`` the curl term is replaced by Dc(m) with the
    case's moment field and ‖curl ζ̃‖ is folded into r2. Cases without an
    exact solution check their defining identities instead: for
    ``grad_limit`` ω against ∇r + Dc(Ψ), for consistent coupling the supplied
    boundary gradient against the derivative of the boundary displacement.
    """
    p = params or case.params
    h = np.longdouble(fd_step)
    x, y = sample_points(case, n_samples, margin=10 * fd_step, seed=seed)
    f_val = np.asarray(case.f(x, y, p), dtype=np.longdouble) + 0 * x

    if not case.has_exact:
        if "r" in case.extras:
            ref = (_fd_grad(case.extras["r"], x, y, h) + _fd_dc(case.extras["Psi"], x, y, h))
            r2 = np.linalg.norm(case.omega(x, y, p) - ref, axis=-1)
        else:
            ref = _fd_grad(lambda a, b: case.u_bc(a, b, p), x, y, h)
            r2 = np.linalg.norm(case.grad_u_bc(x, y, p) - ref, axis=-1)
        return float(np.max(np.abs(f_val))), float(np.max(r2))

    u = lambda a, b: case.u_exact(a, b, p)
    z = lambda a, b: case.zeta_exact(a, b, p)
    gu = _fd_grad(u, x, y, h)
    zz = z(x, y)
    div_gu = _d(lambda a, b: _d(u, a, b, h, 0), x, y, h, 0) + _d(lambda a, b: _d(u, a, b, h, 1), x, y, h, 1)
    r1 = np.abs(-2 * p.mu_e * (div_gu - _fd_div(z, x, y, h)) - f_val)
    vec = -2 * p.mu_e * (gu - zz) + 2 * p.mu_micro * zz
    extra = 0.0
    if math.isinf(p.L_c):
        m = lambda a, b: case.moment_exact(a, b, p)
        vec = vec + _fd_dc(m, x, y, h)
        extra = float(np.max(np.abs(_fd_curl(z, x, y, h))))
    elif p.L_c > 0 and p.mu_macro > 0:
        curl = lambda a, b: _fd_curl(z, a, b, h)
        vec = vec + p.mu_macro * p.L_c ** 2 * _fd_dc(curl, x, y, h)
    r2 = np.linalg.norm(vec - case.omega(x, y, p), axis=-1)
    return float(np.max(r1)), max(float(np.max(r2)), extra)
