"""Shape functions on the reference square Ξ = [−1, 1]² and Gauss quadrature.

Every basis is stored as monomial coefficients ``c[a, b]`` of ``ξ^a η^b`` so
values, gradients and curls are exact polynomial evaluations.

Local edges run counter-clockwise with parameter ``s ∈ [−1, 1]``:

====  ==============  ============  ==========
edge  points          tangent ς     position
====  ==============  ============  ==========
Σ1    v0 → v1         (1, 0)        (s, −1)
Σ2    v1 → v2         (0, 1)        (1, s)
Σ3    v2 → v3         (−1, 0)       (−s, 1)
Σ4    v3 → v0         (0, −1)       (−1, −s)
====  ==============  ============  ==========
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre
from numpy.polynomial import polynomial as P

EDGE_TANGENTS = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
VERTICES = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])


def edge_points(edge: int, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reference coordinates of parameter ``s`` on local edge ``edge`` (0-based)."""
    s = np.asarray(s, dtype=float)
    one = np.ones_like(s)
    return [(s, -one), (one, s), (-s, one), (-one, -s)][edge]


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor-product Gauss rule on Ξ; ``points`` has shape (n², 2)."""

    points: np.ndarray
    weights: np.ndarray

    @property
    def xi(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def eta(self) -> np.ndarray:
        return self.points[:, 1]


@lru_cache(maxsize=None)
def gauss_rule(n: int) -> QuadratureRule:
    """n-point Gauss–Legendre rule per axis, exact for Q^{2n−1,2n−1}."""
    if not 1 <= n <= 10:
        raise ValueError(f"gauss_rule supports 1..10 points per axis, got {n}")
    g, w = legendre.leggauss(n)
    X, Y = np.meshgrid(g, g, indexing="xy")
    W = np.outer(w, w)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    wts = W.ravel()
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(pts, wts)


@dataclass(frozen=True)
class BasisValues:
    """Basis evaluated at ``Q`` points.

    ``values`` is (Q, n) for scalar and (Q, n, 2) for vector families.
    ``grads`` (Q, n, 2) is set for Lagrange, ``curls`` (Q, n) for Nédélec.
    """

    values: np.ndarray
    grads: np.ndarray | None = None
    curls: np.ndarray | None = None


@dataclass(frozen=True)
class ReferenceBasis:
    """Polynomial basis on Ξ.

    Attributes
    ----------
    family : {"lagrange", "nedelec1", "l2disc"}
    order : int
    coeffs : ndarray
        (n, d, d) for scalar families, (n, 2, d, d) for ``nedelec1``.
    dof_kind : tuple
        ``("vertex", i)``, ``("edge", j, q)`` or ``("cell", c)`` per dof.
    """

    family: str
    order: int
    coeffs: np.ndarray
    dof_kind: tuple

    @property
    def n_dofs(self) -> int:
        return len(self.coeffs)

    @property
    def is_vector(self) -> bool:
        return self.family == "nedelec1"

    def values(self, xi, eta) -> np.ndarray:
        return _polyval(xi, eta, self.coeffs)

    def grads(self, xi, eta) -> np.ndarray:
        if self.family == "nedelec1":
            raise TypeError("use curls() for Nédélec bases")
        dx = P.polyder(self.coeffs, axis=-2)
        dy = P.polyder(self.coeffs, axis=-1)
        return np.stack([_polyval(xi, eta, dx), _polyval(xi, eta, dy)], axis=-1)

    def curls(self, xi, eta) -> np.ndarray:
        """Scalar curl ∂ξ ϑ₂ − ∂η ϑ₁ of a vector basis."""
        if self.family != "nedelec1":
            raise TypeError("curl is only defined for vector bases")
        return _polyval(xi, eta, _curl_coeffs(self.coeffs))

    def eval(self, xi, eta) -> BasisValues:
        vals = self.values(xi, eta)
        if self.family == "lagrange":
            return BasisValues(vals, grads=self.grads(xi, eta))
        if self.family == "nedelec1":
            return BasisValues(vals, curls=self.curls(xi, eta))
        return BasisValues(vals)


def _polyval(xi, eta, coeffs: np.ndarray) -> np.ndarray:
    """Evaluate stacked 2D monomial coefficients; leading coefficient axes go last."""
    xi, eta = np.asarray(xi, dtype=float), np.asarray(eta, dtype=float)
    d1, d2 = coeffs.shape[-2:]
    px = xi[..., None] ** np.arange(d1)
    py = eta[..., None] ** np.arange(d2)
    lead = coeffs.shape[:-2]
    flat = coeffs.reshape(-1, d1, d2)
    out = np.einsum("...a,nab,...b->...n", px, flat, py)
    return out.reshape(xi.shape + lead)


def _curl_coeffs(c: np.ndarray) -> np.ndarray:
    d = c.shape[-1]
    out = np.zeros(c.shape[:-3] + (d, d))
    out[..., : d - 1, :] += P.polyder(c[..., 1, :, :], axis=-2)
    out[..., :, : d - 1] -= P.polyder(c[..., 0, :, :], axis=-1)
    return out


def _lagrange_1d(k: int) -> np.ndarray:
    """(k+1, k+1) coefficients of the 1D Lagrange polynomials on a uniform lattice."""
    t = np.linspace(-1.0, 1.0, k + 1)
    out = np.zeros((k + 1, k + 1))
    for i in range(k + 1):
        others = np.delete(t, i)
        c = P.polyfromroots(others)
        out[i] = c / P.polyval(t[i], c)
    return out


def lattice_order(k: int) -> list[tuple[int, int]]:
    """Lattice indices (i, j) of Lagrange dofs: vertices, edge interiors in CCW direction, interior."""
    order = [(0, 0), (k, 0), (k, k), (0, k)]
    order += [(i, 0) for i in range(1, k)]
    order += [(k, j) for j in range(1, k)]
    order += [(i, k) for i in range(k - 1, 0, -1)]
    order += [(0, j) for j in range(k - 1, 0, -1)]
    order += [(i, j) for j in range(1, k) for i in range(1, k)]
    return order


@lru_cache(maxsize=None)
def lagrange_basis(k: int) -> ReferenceBasis:
    """Tensor-product Lagrange Q^{k,k} basis on the uniform (k+1)×(k+1) lattice.

    Vertex dofs come first in the order N1(−1,−1), N2(1,−1), N3(1,1), N4(−1,1),
    followed by edge-interior nodes (Σ1..Σ4, each in its CCW direction) and
    interior nodes.
    """
    if k not in (1, 2, 3):
        raise ValueError(f"lagrange_basis supports k = 1, 2, 3, got {k}")
    l1 = _lagrange_1d(k)
    order = lattice_order(k)
    coeffs = np.array([np.outer(l1[i], l1[j]) for i, j in order])
    kinds = []
    for n, (i, j) in enumerate(order):
        if n < 4:
            kinds.append(("vertex", n))
        elif n < 4 * k:
            e = (n - 4) // (k - 1)
            kinds.append(("edge", e, (n - 4) % (k - 1)))
        else:
            kinds.append(("cell", n - 4 * k))
    coeffs.setflags(write=False)
    return ReferenceBasis("lagrange", k, coeffs, tuple(kinds))


def _nedelec_monomials(k: int) -> np.ndarray:
    """Monomial spanning set of Pe^k = [Q^{k−1,k}; Q^{k,k−1}], shape (2k(k+1), 2, k+1, k+1)."""
    mons = []
    for a in range(k):
        for b in range(k + 1):
            c = np.zeros((2, k + 1, k + 1))
            c[0, a, b] = 1.0
            mons.append(c)
    for a in range(k + 1):
        for b in range(k):
            c = np.zeros((2, k + 1, k + 1))
            c[1, a, b] = 1.0
            mons.append(c)
    return np.array(mons)


def _edge_weights(k: int) -> list[np.ndarray]:
    """Legendre weights {P_0, …, P_{k−1}} as power-series coefficients in s."""
    return [legendre.leg2poly(np.eye(k)[q]) for q in range(k)]


def _cell_weights(k: int) -> list[np.ndarray]:
    """Vector weights spanning [Q^{k−1,k−2}; Q^{k−2,k−1}] as (2, k+1, k+1) coefficients."""
    out = []
    for a in range(k):
        for b in range(k - 1):
            c = np.zeros((2, k + 1, k + 1))
            c[0, a, b] = 1.0
            out.append(c)
    for a in range(k - 1):
        for b in range(k):
            c = np.zeros((2, k + 1, k + 1))
            c[1, a, b] = 1.0
            out.append(c)
    return out


def dof_functionals(k: int, fields: np.ndarray) -> np.ndarray:
    """Apply the Nédélec degrees of freedom to vector fields given as coefficients.

    Edge functionals are ∫_{Σj} P_q(s) ⟨ϑ, ς_j⟩ ds for q < k; cell functionals
    are ∫_Ξ ⟨ϑ, q⟩ dΞ for the weights of ``_cell_weights``. Returns an array of
    shape (n_functionals, n_fields).
    """
    g, w = legendre.leggauss(k + 3)
    rows = []
    for j in range(4):
        xi, eta = edge_points(j, g)
        vals = _polyval(xi, eta, fields)  # (G, n, 2)
        tang = vals @ EDGE_TANGENTS[j]
        for q in _edge_weights(k):
            rows.append((w * P.polyval(g, q)) @ tang)
    rule = gauss_rule(k + 2)
    vals = _polyval(rule.xi, rule.eta, fields)
    for q in _cell_weights(k):
        qv = _polyval(rule.xi, rule.eta, q[None])[:, 0, :]
        rows.append(rule.weights @ np.einsum("gnc,gc->gn", vals, qv))
    return np.array(rows)


def _edge_targets(k: int) -> np.ndarray:
    """Functional values of each basis function on its own dof.

    Edge moment q is scaled so the tangential trace on the own edge is P_q(s):
    ∫ P_q² ds = 2/(2q+1). Cell dofs are normalized to 1.
    """
    edge = [2.0 / (2 * q + 1) for q in range(k)] * 4
    return np.array(edge + [1.0] * (2 * k * (k - 1)))


@lru_cache(maxsize=None)
def nedelec_basis(k: int) -> ReferenceBasis:
    """First-kind Nédélec basis of order k on Ξ.

    For k = 1 these are ϑ1 = ½(1−η, 0), ϑ2 = ½(0, 1+ξ), ϑ3 = ½(−1−η, 0),
    ϑ4 = ½(0, ξ−1): each has tangential trace 1 on its own edge. For k = 2 the
    edge functions have tangential trace 1 (moment 0) or s (moment 1) on their
    own edge, and the cell functions are dual to the interior moments.
    Local order is ``edge*k + q`` followed by the cell dofs.
    """
    if k not in (1, 2):
        raise ValueError(f"nedelec_basis supports k = 1, 2, got {k}")
    mons = _nedelec_monomials(k)
    F = dof_functionals(k, mons)
    target = np.diag(_edge_targets(k))
    coef = np.linalg.solve(F, target)  # columns: basis functions in monomial span
    coeffs = np.einsum("mb,mcij->bcij", coef, mons)
    coeffs[np.abs(coeffs) < 1e-14] = 0.0
    kinds = [("edge", j, q) for j in range(4) for q in range(k)]
    kinds += [("cell", c) for c in range(2 * k * (k - 1))]
    coeffs.setflags(write=False)
    return ReferenceBasis("nedelec1", k, coeffs, tuple(kinds))


@lru_cache(maxsize=None)
def l2_basis(k: int) -> ReferenceBasis:
    """Discontinuous Q^{k−1,k−1} monomials: k=1 → {1}, k=2 → {1, ξ, η, ξη}."""
    if k not in (1, 2):
        raise ValueError(f"l2_basis supports k = 1, 2, got {k}")
    coeffs = []
    for b in range(k):
        for a in range(k):
            c = np.zeros((k, k))
            c[a, b] = 1.0
            coeffs.append(c)
    coeffs = np.array(coeffs)
    coeffs.setflags(write=False)
    return ReferenceBasis("l2disc", k, coeffs, tuple(("cell", i) for i in range(k * k)))
