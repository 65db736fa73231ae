"""Bilinear element geometry, H¹ gradient pull-back and covariant Piola mapping.

The Jacobian convention is ``J[a, b] = ∂x_a / ∂ξ_b``. Functions accept
arbitrary leading batch axes so the same code serves one point, one element
or a whole mesh at all quadrature points.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .refspaces import lagrange_basis


class GeometryError(ValueError):
    """Degenerate or inverted element map."""


@dataclass(frozen=True)
class ElementGeometry:
    """Corner coordinates (4, 2) of one quadrilateral, counter-clockwise."""

    corners: np.ndarray

    def __post_init__(self):
        c = np.array(self.corners, dtype=float)
        if c.shape != (4, 2):
            raise GeometryError("an element needs 4 corners in 2D")
        c.setflags(write=False)
        object.__setattr__(self, "corners", c)

    def x(self, xi, eta) -> np.ndarray:
        """Physical point of the bilinear map."""
        N = lagrange_basis(1).values(xi, eta)
        return N @ self.corners

    def jacobian(self, xi, eta) -> tuple[np.ndarray, np.ndarray]:
        return jacobian(self, xi, eta)


def _corner_grads(xi, eta) -> np.ndarray:
    return lagrange_basis(1).grads(xi, eta)  # (..., 4, 2)


def jacobian(geom: ElementGeometry, xi, eta) -> tuple[np.ndarray, np.ndarray]:
    """Jacobian matrix and determinant of the bilinear map at (ξ, η).

    Raises
    ------
    GeometryError
        If det J ≤ 0 at any requested point.
    """
    dN = _corner_grads(xi, eta)
    J = np.einsum("...ib,ia->...ab", dN, geom.corners)
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    if np.any(det <= 0):
        raise GeometryError(f"nonpositive Jacobian determinant {np.min(det):.3e}")
    return J, det


def inv_transpose(J: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """J^{-T} and det J for stacked 2×2 matrices."""
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    if np.any(det == 0):
        raise GeometryError("singular Jacobian")
    inv_t = np.empty_like(J)
    inv_t[..., 0, 0] = J[..., 1, 1]
    inv_t[..., 0, 1] = -J[..., 1, 0]
    inv_t[..., 1, 0] = -J[..., 0, 1]
    inv_t[..., 1, 1] = J[..., 0, 0]
    return inv_t / det[..., None, None], det


def map_h1(gradref: np.ndarray, J: np.ndarray) -> np.ndarray:
    """Physical gradient J^{-T} ∇_ξ N. ``gradref`` (..., 2) broadcasts against J."""
    jit, _ = inv_transpose(J)
    return np.einsum("...ab,...b->...a", jit, gradref)


def map_hcurl(theta: np.ndarray, J: np.ndarray, psi=1) -> np.ndarray:
    """Covariant Piola transform ψ J^{-T} ϑ."""
    jit, _ = inv_transpose(J)
    return np.asarray(psi)[..., None] * np.einsum("...ab,...b->...a", jit, theta)


def map_curl(curlref, detJ, psi=1):
    """Physical curl ψ curl_ξ ϑ / det J of a Piola-mapped field."""
    if np.any(np.asarray(detJ) <= 0):
        raise GeometryError("nonpositive Jacobian determinant")
    return np.asarray(psi) * np.asarray(curlref) / np.asarray(detJ)


@dataclass(frozen=True)
class BatchGeometry:
    """Geometry of many elements at shared reference points.

    Attributes
    ----------
    x : (E, Q, 2) physical points
    J : (E, Q, 2, 2)
    jit : (E, Q, 2, 2) inverse transpose of J
    det : (E, Q)
    """

    x: np.ndarray
    J: np.ndarray
    jit: np.ndarray
    det: np.ndarray


def batch_geometry(corners: np.ndarray, xi, eta) -> BatchGeometry:
    """Evaluate the bilinear map of every element in ``corners`` (E, 4, 2)."""
    L = lagrange_basis(1)
    N = L.values(xi, eta)       # (Q, 4)
    dN = L.grads(xi, eta)       # (Q, 4, 2)
    x = np.einsum("qi,eia->eqa", N, corners)
    J = np.einsum("qib,eia->eqab", dN, corners)
    jit, det = inv_transpose(J)
    if np.any(det <= 0):
        bad = np.unique(np.nonzero(det <= 0)[0])
        raise GeometryError(f"nonpositive Jacobian in elements {bad[:10]}")
    return BatchGeometry(x, J, jit, det)
