"""Element matrices, global sparse assembly and Dirichlet elimination.

Global unknowns are ordered ``[u | ζ | m | λ]``:

* ``u``: Lagrange Q^k, vertices first, then edge-interior nodes
  (``n_nodes + edge*(k−1) + i`` with ``i`` counted from the lower node index),
  then element-interior nodes.
* ``ζ`` hybrid: Nédélec edge dofs ``edge*k + q`` (Legendre moment ``q``,
  measured along the global lo → hi direction), then ``2k(k−1)`` interior dofs
  per element.
* ``ζ`` nodal: ``2*node + component`` on the Lagrange Q^k node set.
* ``m`` (mixed only): ``k²`` discontinuous dofs per element.
* ``λ``: one multiplier fixing ∫ m when every boundary edge carries a
  tangential ζ constraint.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp
from numpy.polynomial import legendre

from .mesh import QuadMesh
from .piola import batch_geometry
from .refspaces import gauss_rule, l2_basis, lagrange_basis, lattice_order, nedelec_basis

log = logging.getLogger(__name__)

KINDS = ("primal-hybrid", "mixed-hybrid", "primal-nodal", "full-gradient")
CHUNK = 4096


class AssemblyError(ValueError):
    """Inconsistent formulation, parameters or boundary data."""


@dataclass(frozen=True)
class MaterialParams:
    """Material constants of the planar model. ``L_c`` may be ``math.inf``."""

    mu_e: float = 1.0
    mu_micro: float = 1.0
    mu_macro: float = 1.0
    L_c: float = 1.0

    def __post_init__(self):
        if not (self.mu_e > 0 and self.mu_micro > 0):
            raise AssemblyError("mu_e and mu_micro must be positive")
        if not (self.mu_macro >= 0 and self.L_c >= 0):
            raise AssemblyError("mu_macro and L_c must be nonnegative")

    @property
    def lc_inf(self) -> bool:
        return math.isinf(self.L_c)

    @property
    def macro(self) -> float:
        """μ_macro L_c², the curl stiffness."""
        if self.lc_inf:
            raise AssemblyError("curl stiffness is unbounded for L_c = inf")
        return self.mu_macro * self.L_c ** 2

    def with_lc(self, lc: float) -> "MaterialParams":
        return replace(self, L_c=float(lc))


@dataclass(frozen=True)
class Formulation:
    """Discretization choice: one of ``KINDS`` and polynomial order ``k``."""

    kind: str
    order: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise AssemblyError(f"unknown formulation {self.kind!r}; choose from {KINDS}")
        if self.order not in (1, 2):
            raise AssemblyError(f"order must be 1 or 2, got {self.order}")

    @property
    def hybrid(self) -> bool:
        return self.kind in ("primal-hybrid", "mixed-hybrid")

    @property
    def mixed(self) -> bool:
        return self.kind == "mixed-hybrid"

    def check_params(self, params: MaterialParams) -> None:
        if self.mixed and params.L_c == 0:
            raise AssemblyError("the mixed formulation is undefined for L_c = 0")
        if self.mixed and params.mu_macro == 0:
            raise AssemblyError("the mixed formulation needs mu_macro > 0")
        if not self.mixed and params.lc_inf:
            raise AssemblyError("L_c = inf is only available with mixed-hybrid")

    def __str__(self) -> str:
        return f"{self.kind}({self.order})"


def PrimalHybrid(k: int = 1) -> Formulation:
    return Formulation("primal-hybrid", k)


def MixedHybrid(k: int = 1) -> Formulation:
    return Formulation("mixed-hybrid", k)


def PrimalNodal(k: int = 1) -> Formulation:
    return Formulation("primal-nodal", k)


def FullGradientNodal(k: int = 1) -> Formulation:
    return Formulation("full-gradient", k)


# --------------------------------------------------------------------------- dofs
def lagrange_dofs(mesh: QuadMesh, k: int) -> tuple[np.ndarray, int]:
    """Global Lagrange dof indices per element (E, (k+1)²) and the dof count."""
    E = mesh.n_elems
    et = mesh.edge_table
    dofs = np.empty((E, (k + 1) ** 2), dtype=np.int64)
    dofs[:, :4] = mesh.elems
    base = mesh.n_nodes
    col = 4
    for j in range(4):
        for i in range(k - 1):
            along = np.where(et.elem_signs[:, j] > 0, i, k - 2 - i)
            dofs[:, col] = base + et.elem_edges[:, j] * (k - 1) + along
            col += 1
    base += mesh.n_edges * (k - 1)
    ni = (k - 1) ** 2
    for c in range(ni):
        dofs[:, col] = base + np.arange(E) * ni + c
        col += 1
    return dofs, base + E * ni


def lagrange_points(mesh: QuadMesh, k: int) -> np.ndarray:
    """Physical coordinates of all global Lagrange dofs."""
    dofs, n = lagrange_dofs(mesh, k)
    lat = np.array(lattice_order(k), dtype=float) * (2.0 / k) - 1.0
    N1 = lagrange_basis(1).values(lat[:, 0], lat[:, 1])  # (n_loc, 4)
    pts = np.empty((n, 2))
    pts[dofs] = np.einsum("li,eia->ela", N1, mesh.corners())
    return pts


@dataclass(frozen=True)
class DofMap:
    """Global numbering of all fields for one mesh and formulation.

    ``elem_dofs`` lists, per element, the local ``[u | ζ | m]`` dofs in global
    numbering and ``elem_signs`` the orientation factor of each local dof (±1
    for hybrid ζ edge moments, +1 otherwise).
    """

    formulation: Formulation
    n_u: int
    n_zeta: int
    n_m: int
    n_lambda: int
    elem_dofs: np.ndarray
    elem_signs: np.ndarray
    n_u_loc: int
    n_zeta_loc: int
    n_m_loc: int
    constrained: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    values: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def n_dofs(self) -> int:
        return self.n_u + self.n_zeta + self.n_m + self.n_lambda

    @property
    def zeta_offset(self) -> int:
        return self.n_u

    @property
    def m_offset(self) -> int:
        return self.n_u + self.n_zeta

    @property
    def lambda_dof(self) -> int | None:
        return self.n_dofs - 1 if self.n_lambda else None

    def field_slices(self) -> dict[str, slice]:
        o = np.cumsum([0, self.n_u, self.n_zeta, self.n_m, self.n_lambda])
        return {name: slice(o[i], o[i + 1]) for i, name in enumerate(("u", "zeta", "m", "lambda"))}

    def local(self, part: str) -> slice:
        a, b = self.n_u_loc, self.n_u_loc + self.n_zeta_loc
        return {"u": slice(0, a), "zeta": slice(a, b),
                "m": slice(b, b + self.n_m_loc)}[part]

    def free(self) -> np.ndarray:
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[self.constrained] = False
        return np.flatnonzero(mask)


def build_dofmap(mesh: QuadMesh, form: Formulation, with_lambda: bool = False) -> DofMap:
    k = form.order
    E = mesh.n_elems
    et = mesh.edge_table
    u_dofs, n_u = lagrange_dofs(mesh, k)
    if form.hybrid:
        nb = 4 * k + 2 * k * (k - 1)
        z = np.empty((E, nb), dtype=np.int64)
        s = np.ones((E, nb), dtype=np.int64)
        for j in range(4):
            for q in range(k):
                z[:, j * k + q] = et.elem_edges[:, j] * k + q
                s[:, j * k + q] = et.elem_signs[:, j] ** (q + 1)
        ni = 2 * k * (k - 1)
        for c in range(ni):
            z[:, 4 * k + c] = mesh.n_edges * k + np.arange(E) * ni + c
        n_zeta = mesh.n_edges * k + E * ni
    else:
        z = np.stack([2 * u_dofs, 2 * u_dofs + 1], axis=-1).reshape(E, -1)
        s = np.ones_like(z)
        n_zeta = 2 * n_u
    z = z + n_u
    if form.mixed:
        nm = k * k
        m = n_u + n_zeta + np.arange(E)[:, None] * nm + np.arange(nm)
        n_m = E * nm
    else:
        nm, n_m = 0, 0
        m = np.empty((E, 0), dtype=np.int64)
    dofs = np.concatenate([u_dofs, z, m], axis=1)
    signs = np.concatenate([np.ones_like(u_dofs), s, np.ones_like(m)], axis=1)
    n_lambda = 1 if (form.mixed and with_lambda) else 0
    return DofMap(form, n_u, n_zeta, n_m, n_lambda, dofs, signs,
                  u_dofs.shape[1], z.shape[1], nm)


# --------------------------------------------------------------- element fields
@dataclass(frozen=True)
class ElementFields:
    """Mapped basis data for a batch of elements at quadrature points.

    ``zeta`` (E, Q, nz, 2), ``curl`` (E, Q, nz) and, for nodal spaces,
    ``zeta_grad`` (E, Q, nz, 2, 2) with ``[..., a, b] = ∂_b ζ_a``.
    """

    x: np.ndarray
    wdet: np.ndarray
    det: np.ndarray
    H: np.ndarray
    gradH: np.ndarray
    zeta: np.ndarray
    curl: np.ndarray
    zeta_grad: np.ndarray | None = None
    M: np.ndarray | None = None


def element_fields(corners: np.ndarray, form: Formulation, xi, eta, weights=None,
                   signs: np.ndarray | None = None) -> ElementFields:
    """Evaluate the physical basis of ``form`` on elements ``corners`` (E, 4, 2).

    ``signs`` (E, nz) are the orientation factors of the ζ dofs (hybrid only).
    """
    k = form.order
    g = batch_geometry(corners, xi, eta)
    E, Q = g.det.shape
    wdet = g.det * (weights if weights is not None else 1.0)
    L = lagrange_basis(k)
    H = L.values(xi, eta)                                     # (Q, nu)
    gradH = np.einsum("eqab,qib->eqia", g.jit, L.grads(xi, eta))
    if form.hybrid:
        N = nedelec_basis(k)
        th = np.einsum("eqab,qib->eqia", g.jit, N.values(xi, eta))
        cu = N.curls(xi, eta)[None] / g.det[..., None]
        if signs is not None:
            th = th * signs[:, None, :, None]
            cu = cu * signs[:, None, :]
        zg = None
    else:
        nu = H.shape[1]
        th = np.zeros((Q, nu, 2, 2))
        th[:, :, 0, 0] = H
        th[:, :, 1, 1] = H
        th = np.broadcast_to(th.reshape(Q, 2 * nu, 2), (E, Q, 2 * nu, 2))
        # ζ = N_i e_c: curl(N e_x) = −∂y N, curl(N e_y) = ∂x N
        cu = np.stack([-gradH[..., 1], gradH[..., 0]], axis=-1).reshape(E, Q, 2 * nu)
        zg = np.zeros((E, Q, nu, 2, 2, 2))
        zg[:, :, :, 0, 0, :] = gradH
        zg[:, :, :, 1, 1, :] = gradH
        zg = zg.reshape(E, Q, 2 * nu, 2, 2)
    M = l2_basis(k).values(xi, eta) if form.mixed else None
    return ElementFields(g.x, wdet, g.det, H, gradH, th, cu, zg, M)


def _blocks(params: MaterialParams, ef: ElementFields, form: Formulation):
    """(K_e, K_micro, K_macro) over local [u | ζ] for a batch of elements."""
    E, Q, nu, _ = ef.gradH.shape
    nz = ef.zeta.shape[2]
    D = np.concatenate([ef.gradH, -ef.zeta], axis=2)
    Ke = 2 * params.mu_e * np.einsum("eq,eqia,eqja->eij", ef.wdet, D, D)
    Kmi = np.zeros_like(Ke)
    Kmi[:, nu:, nu:] = 2 * params.mu_micro * np.einsum("eq,eqia,eqja->eij", ef.wdet,
                                                        ef.zeta, ef.zeta)
    Kma = np.zeros_like(Ke)
    if not params.lc_inf and params.macro > 0:
        if form.kind == "full-gradient":
            Kma[:, nu:, nu:] = params.macro * np.einsum("eq,eqiab,eqjab->eij", ef.wdet,
                                                        ef.zeta_grad, ef.zeta_grad)
        else:
            Kma[:, nu:, nu:] = params.macro * np.einsum("eq,eqi,eqj->eij", ef.wdet,
                                                        ef.curl, ef.curl)
    return Ke, Kmi, Kma


def _default_quad(form: Formulation, quad: int | None) -> int:
    return quad if quad is not None else form.order + 2


def _single(geom) -> np.ndarray:
    c = geom.corners if hasattr(geom, "corners") else np.asarray(geom, dtype=float)
    return np.asarray(c, dtype=float)[None]


def element_matrices_hybrid(params: MaterialParams, geom, k: int = 1, signs=None,
                            quad: int | None = None):
    """Hybrid H¹ × H(curl) element matrices (K_e, K_micro, K_macro) of one element.

    Local ordering is the Lagrange dofs followed by the Nédélec dofs.
    """
    form = PrimalHybrid(k)
    rule = gauss_rule(_default_quad(form, quad))
    s = None if signs is None else np.asarray(signs)[None]
    ef = element_fields(_single(geom), form, rule.xi, rule.eta, rule.weights, s)
    return tuple(K[0] for K in _blocks(params, ef, form))


def element_matrices_nodal(params: MaterialParams, geom, k: int = 1, quad: int | None = None):
    """Nodal H¹ × [H¹]² element matrices; ζ dofs interleaved as (x, y) per node."""
    form = PrimalNodal(k)
    rule = gauss_rule(_default_quad(form, quad))
    ef = element_fields(_single(geom), form, rule.xi, rule.eta, rule.weights)
    return tuple(K[0] for K in _blocks(params, ef, form))


def element_matrices_fullgrad(params: MaterialParams, geom, k: int = 1,
                              quad: int | None = None) -> np.ndarray:
    """Full-gradient curvature matrix μ_macro L_c² ∫ ∇ζ : ∇δζ of one element."""
    form = FullGradientNodal(k)
    rule = gauss_rule(_default_quad(form, quad))
    ef = element_fields(_single(geom), form, rule.xi, rule.eta, rule.weights)
    return _blocks(params, ef, form)[2][0]


def _load_vectors(ef: ElementFields, f: Callable, omega: Callable):
    x, y = ef.x[..., 0], ef.x[..., 1]
    fv = np.broadcast_to(np.asarray(f(x, y), dtype=float), x.shape)
    wv = np.asarray(omega(x, y), dtype=float)
    fbar = np.einsum("eq,qi,eq->ei", ef.wdet, ef.H, fv)
    wbar = np.einsum("eq,eqia,eqa->ei", ef.wdet, ef.zeta, wv)
    return fbar, wbar


def element_rhs(f: Callable, omega: Callable, geom, form: Formulation, signs=None,
                quad: int | None = None):
    """Load vectors (f̄_e, ω̄_e) of one element by Gauss quadrature.

    ``f(x, y)`` returns scalars and ``omega(x, y)`` vectors with a trailing
    axis of length 2.
    """
    rule = gauss_rule(quad if quad is not None else form.order + 4)
    s = None if signs is None else np.asarray(signs)[None]
    ef = element_fields(_single(geom), form, rule.xi, rule.eta, rule.weights, s)
    fb, wb = _load_vectors(ef, f, omega)
    return fb[0], wb[0]


# ------------------------------------------------------------ boundary values
def _edge_set(mesh: QuadMesh, tags) -> np.ndarray:
    if not tags:
        return np.empty(0, np.int64)
    return np.unique(np.concatenate([mesh.tag(t).edges for t in tags]))


def _node_set(mesh: QuadMesh, tags) -> np.ndarray:
    if not tags:
        return np.empty(0, np.int64)
    return np.unique(np.concatenate([mesh.tag(t).nodes for t in tags]))


def u_constraints(mesh: QuadMesh, k: int, tags, value: Callable) -> tuple[np.ndarray, np.ndarray]:
    """Nodal interpolation of ``value(x, y)`` on the Lagrange dofs of tagged nodes/edges."""
    nodes = _node_set(mesh, tags)
    edges = _edge_set(mesh, tags)
    idx = [nodes]
    if k > 1 and edges.size:
        idx.append((mesh.n_nodes + edges[:, None] * (k - 1) + np.arange(k - 1)).ravel())
    idx = np.unique(np.concatenate(idx)).astype(np.int64)
    pts = lagrange_points(mesh, k)[idx]
    return idx, np.asarray(value(pts[:, 0], pts[:, 1]), dtype=float).reshape(-1)


def edge_moments(mesh: QuadMesh, edges: np.ndarray, k: int, value: Callable,
                 n_gauss: int = 6) -> np.ndarray:
    """Tangential Legendre moments of a vector field on straight edges.

    With ``t(s) = ⟨ζ(x(s)), (x_hi − x_lo)/2⟩`` along the global direction,
    moment ``q`` is ``(2q+1)/2 ∫ P_q(s) t(s) ds``, so that the discrete
    tangential trace (in the edge parameter) is the L² projection of ``t``.
    Returns (len(edges), k).
    """
    g, w = legendre.leggauss(n_gauss)
    a = mesh.nodes[mesh.edges[edges, 0]]
    b = mesh.nodes[mesh.edges[edges, 1]]
    pts = 0.5 * (a + b)[:, None, :] + 0.5 * (b - a)[:, None, :] * g[None, :, None]
    vals = np.asarray(value(pts[..., 0], pts[..., 1]), dtype=float)
    t = np.einsum("ega,ea->eg", vals, 0.5 * (b - a))
    out = np.empty((len(edges), k))
    for q in range(k):
        Pq = legendre.legval(g, np.eye(k)[q])
        out[:, q] = 0.5 * (2 * q + 1) * (t * Pq) @ w
    return out


def zeta_constraints(mesh: QuadMesh, dm: DofMap, tags, value: Callable,
                     components: str = "tangential") -> tuple[np.ndarray, np.ndarray]:
    """ζ constraints on tagged edges for the formulation of ``dm``.

    ``components="full"`` fixes both nodal components and is only available
    for nodal formulations; Nédélec dofs carry the tangential trace alone.
    """
    if components not in ("tangential", "full"):
        raise AssemblyError(f"unknown ζ constraint components {components!r}")
    edges = _edge_set(mesh, tags)
    k = dm.formulation.order
    if edges.size == 0:
        return np.empty(0, np.int64), np.empty(0)
    if dm.formulation.hybrid and components == "full":
        raise AssemblyError("H(curl) elements only admit tangential ζ constraints")
    if dm.formulation.hybrid:
        idx = dm.zeta_offset + (edges[:, None] * k + np.arange(k)).ravel()
        return idx, edge_moments(mesh, edges, k, value).ravel()
    # nodal: constrain the tangential component at every node of the tagged edges
    if components == "full":
        horiz = vert = np.ones(len(edges), bool)
    else:
        d = mesh.nodes[mesh.edges[edges, 1]] - mesh.nodes[mesh.edges[edges, 0]]
        horiz = np.abs(d[:, 1]) <= 1e-12 * np.abs(d[:, 0])
        vert = np.abs(d[:, 0]) <= 1e-12 * np.abs(d[:, 1])
        if not np.all(horiz | vert):
            raise AssemblyError("nodal ζ constraints require axis-aligned constrained edges")
    pts = lagrange_points(mesh, k)
    pairs = []
    for sel, comp in ((horiz, 0), (vert, 1)):
        e = edges[sel]
        nodes = [mesh.edges[e].ravel()]
        if k > 1:
            nodes.append((mesh.n_nodes + e[:, None] * (k - 1) + np.arange(k - 1)).ravel())
        nodes = np.unique(np.concatenate(nodes))
        pairs.append(2 * nodes + comp)
    idx = np.unique(np.concatenate(pairs))
    node, comp = idx // 2, idx % 2
    vals = np.asarray(value(pts[node, 0], pts[node, 1]), dtype=float)
    return dm.zeta_offset + idx, vals[np.arange(len(idx)), comp]


def consistent_coupling(case, mesh: QuadMesh, form: Formulation | None = None,
                        params: MaterialParams | None = None):
    """ζ constraints from the tangential derivative of the prescribed displacement.

    The case's ``zeta_dirichlet`` tags must be covered by its ``u_dirichlet``
    tags. Returns ``(dof indices, values)`` for ``form`` (default primal-hybrid
    order 1).
    """
    form = form or PrimalHybrid(1)
    params = params or case.params
    u_edges = set(_edge_set(mesh, case.u_dirichlet).tolist())
    z_edges = _edge_set(mesh, case.zeta_dirichlet)
    missing = [e for e in z_edges.tolist() if e not in u_edges]
    if missing:
        raise AssemblyError(
            f"consistent coupling needs the ζ-Dirichlet boundary inside the u-Dirichlet "
            f"boundary; {len(missing)} edges are not displacement-constrained")
    dm = build_dofmap(mesh, form)
    return zeta_constraints(mesh, dm, case.zeta_dirichlet,
                            lambda x, y: case.grad_u_bc(x, y, params))


# ------------------------------------------------------------------- systems
@dataclass(frozen=True)
class LinearSystem:
    """Assembled system before and after Dirichlet elimination.

    ``A``/``b`` are the reduced (free-dof) matrix and right-hand side; the full
    matrix is kept in ``A_full`` for diagnostics and energy evaluation.
    """

    A: sp.csr_matrix
    b: np.ndarray
    A_full: sp.csr_matrix
    b_full: np.ndarray
    dofmap: DofMap
    free: np.ndarray
    params: MaterialParams
    mesh: QuadMesh = field(repr=False)

    @property
    def formulation(self) -> Formulation:
        return self.dofmap.formulation

    @property
    def saddle(self) -> bool:
        return self.formulation.mixed

    def expand(self, x_free: np.ndarray) -> np.ndarray:
        x = np.zeros(self.dofmap.n_dofs)
        x[self.dofmap.constrained] = self.dofmap.values
        x[self.free] = x_free
        return x


def _scatter(dofs: np.ndarray, Ke: np.ndarray, n: int) -> sp.csr_matrix:
    nl = dofs.shape[1]
    rows = np.repeat(dofs, nl, axis=1).ravel()
    cols = np.tile(dofs, (1, nl)).ravel()
    return sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def assemble(mesh: QuadMesh, form: Formulation, params: MaterialParams, case,
             quad: int | None = None, load_quad: int | None = None) -> LinearSystem:
    """Assemble and constrain the global system of ``case`` on ``mesh``.

    Parameters
    ----------
    case
        Object providing ``f``, ``omega``, ``u_bc``, ``zeta_bc``/``grad_u_bc``
        callables of ``(x, y, params)`` and tag tuples ``u_dirichlet``,
        ``zeta_dirichlet``; ``zeta_values`` selects ``"exact"`` or
        ``"consistent"`` tangential data; an optional ``zeta_components``
        (``"tangential"`` or ``"full"``) selects the constrained nodal components.
    quad, load_quad
        Gauss points per axis for stiffness (default k+2) and loads (k+4).
    """
    form.check_params(params)
    for t in tuple(case.u_dirichlet) + tuple(case.zeta_dirichlet):
        mesh.tag(t)
    k = form.order
    bnd = mesh.tag("boundary").edges
    z_edges = _edge_set(mesh, case.zeta_dirichlet)
    covers = bnd.size > 0 and np.all(np.isin(bnd, z_edges))
    dm = build_dofmap(mesh, form, with_lambda=covers)
    n = dm.n_dofs
    srule = gauss_rule(_default_quad(form, quad))
    lrule = gauss_rule(load_quad if load_quad is not None else k + 4)
    f = lambda x, y: case.f(x, y, params)
    w = lambda x, y: case.omega(x, y, params)

    corners = mesh.corners()
    mats, rhs = [], []
    g_curl = np.zeros(n)
    mean_row = np.zeros(n)
    nu, nz, nm = dm.n_u_loc, dm.n_zeta_loc, dm.n_m_loc
    zs = dm.local("zeta")
    for lo in range(0, mesh.n_elems, CHUNK):
        sl = slice(lo, min(lo + CHUNK, mesh.n_elems))
        signs = dm.elem_signs[sl, zs] if form.hybrid else None
        ef = element_fields(corners[sl], form, srule.xi, srule.eta, srule.weights, signs)
        Ke, Kmi, Kma = _blocks(params, ef, form)
        K = np.zeros((Ke.shape[0], nu + nz + nm, nu + nz + nm))
        K[:, :nu + nz, :nu + nz] = Ke + Kmi + (0 if form.mixed else Kma)
        if form.mixed:
            B = np.einsum("eq,qi,eqj->eij", ef.wdet, ef.M, ef.curl)
            K[:, nu + nz:, nu:nu + nz] = B
            K[:, nu:nu + nz, nu + nz:] = B.transpose(0, 2, 1)
            if not params.lc_inf:
                C = np.einsum("eq,qi,qj->eij", ef.wdet, ef.M, ef.M)
                K[:, nu + nz:, nu + nz:] = -C / params.macro
            np.add.at(mean_row, dm.elem_dofs[sl, dm.local("m")],
                      np.einsum("eq,qi->ei", ef.wdet, ef.M))
            np.add.at(g_curl, dm.elem_dofs[sl, zs], np.einsum("eq,eqj->ej", ef.wdet, ef.curl))
        mats.append(K)
        lf = element_fields(corners[sl], form, lrule.xi, lrule.eta, lrule.weights, signs)
        fb, wb = _load_vectors(lf, f, w)
        rhs.append(np.concatenate([fb, wb, np.zeros((fb.shape[0], nm))], axis=1))
    K = np.concatenate(mats)
    loc = dm.elem_dofs
    A = _scatter(loc, K, n)
    b = np.bincount(loc.ravel(), weights=np.concatenate(rhs).ravel(), minlength=n)

    # Dirichlet data
    cu, vu = u_constraints(mesh, k, case.u_dirichlet, lambda x, y: case.u_bc(x, y, params))
    if case.zeta_dirichlet:
        if getattr(case, "zeta_values", "exact") == "consistent":
            zval = lambda x, y: case.grad_u_bc(x, y, params)
        else:
            zval = lambda x, y: case.zeta_bc(x, y, params)
        cz, vz = zeta_constraints(mesh, dm, case.zeta_dirichlet, zval,
                                  getattr(case, "zeta_components", "tangential"))
    else:
        cz, vz = np.empty(0, np.int64), np.empty(0)
    cons = np.concatenate([cu, cz]).astype(np.int64)
    vals = np.concatenate([vu, vz])
    if len(np.unique(cons)) != len(cons):
        raise AssemblyError("a dof is constrained twice")

    if dm.n_lambda:
        lam = n - 1
        A = A.tolil()
        A[lam, :] = mean_row
        A[:, lam] = mean_row[:, None]
        A = A.tocsr()
        # ∫ m = μ_macro L_c² ∮ ⟨ζ, τ⟩ ds, fixed by the boundary data
        x_c = np.zeros(n)
        x_c[cons] = vals
        b[lam] = 0.0 if params.lc_inf else params.macro * float(g_curl @ x_c)

    order = np.argsort(cons)
    dm = replace(dm, constrained=cons[order], values=vals[order])
    free = dm.free()
    x_c = np.zeros(n)
    x_c[dm.constrained] = dm.values
    A.sort_indices()
    b_red = b[free] - (A @ x_c)[free]
    A_red = A[free][:, free].tocsr()
    return LinearSystem(A_red, b_red, A, b, dm, free, params, mesh)
