"""Post-processing: field evaluation, error norms, energy and convergence rates."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterator, Sequence

import numpy as np

from .assembly import CHUNK, DofMap, Formulation, MaterialParams, element_fields
from .mesh import QuadMesh
from .refspaces import gauss_rule


class AnalysisError(ValueError):
    """Post-processing request that cannot be evaluated reliably."""


@dataclass(frozen=True)
class FieldSolution:
    """Coefficient vector together with the mesh and numbering that define it."""

    mesh: QuadMesh
    dofmap: DofMap
    x: np.ndarray

    @property
    def formulation(self) -> Formulation:
        return self.dofmap.formulation

    def evaluate(self, xi, eta, weights=None) -> Iterator[dict]:
        """Yield field values at reference points (ξ, η), chunk by chunk of elements.

        Each chunk holds ``x`` (E, Q, 2), ``u`` (E, Q), ``grad_u`` (E, Q, 2),
        ``zeta`` (E, Q, 2), ``curl`` (E, Q), ``m`` (E, Q) for mixed solutions,
        ``zeta_grad`` (E, Q, 2, 2) for nodal ones and ``wdet`` if ``weights``
        is given.
        """
        dm = self.dofmap
        form = self.formulation
        corners = self.mesh.corners()
        zs = dm.local("zeta")
        for lo in range(0, self.mesh.n_elems, CHUNK):
            sl = slice(lo, min(lo + CHUNK, self.mesh.n_elems))
            signs = dm.elem_signs[sl, zs] if form.hybrid else None
            ef = element_fields(corners[sl], form, xi, eta, weights, signs)
            c = self.x[dm.elem_dofs[sl]]
            cu, cz = c[:, dm.local("u")], c[:, zs]
            out = {
                "x": ef.x,
                "u": np.einsum("qi,ei->eq", ef.H, cu),
                "grad_u": np.einsum("eqia,ei->eqa", ef.gradH, cu),
                "zeta": np.einsum("eqia,ei->eqa", ef.zeta, cz),
                "curl": np.einsum("eqi,ei->eq", ef.curl, cz),
            }
            if weights is not None:
                out["wdet"] = ef.wdet
            if ef.zeta_grad is not None:
                out["zeta_grad"] = np.einsum("eqiab,ei->eqab", ef.zeta_grad, cz)
            if ef.M is not None:
                out["m"] = np.einsum("qi,ei->eq", ef.M, c[:, dm.local("m")])
            yield out

    def at_points(self, xi, eta) -> dict:
        """All chunks of :meth:`evaluate` concatenated along the element axis."""
        parts = list(self.evaluate(np.atleast_1d(xi), np.atleast_1d(eta)))
        return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


@dataclass(frozen=True)
class ErrorReport:
    """L² and H(curl) errors of one solution plus derived solution norms.

    The H(curl) norm is ‖ζ‖² = ‖ζ‖²_L² + ‖curl ζ‖²_L². Error entries are NaN
    for cases without an exact solution. ``graddiff`` is ‖∇u−ζ‖_L² and
    ``graddiff_l1`` the L¹ norm ∫|∇u−ζ| of the same deviation.
    """

    l2_u: float
    l2_zeta: float
    l2_curl_zeta: float
    hcurl_zeta: float
    rel_l2_u: float
    rel_l2_zeta: float
    rel_hcurl_zeta: float
    graddiff: float
    curlnorm: float
    graddiff_l1: float
    ndof_u: int
    ndof_zeta: int
    ndof_m: int
    h: float

    def as_dict(self) -> dict:
        return asdict(self)


def _check_kinks(mesh: QuadMesh, kinks: Sequence[float]) -> None:
    x = mesh.corners()[:, :, 0]
    for k in kinks:
        tol = 1e-12 * max(1.0, abs(k))
        straddle = (x.min(axis=1) < k - tol) & (x.max(axis=1) > k + tol)
        if np.any(straddle):
            raise AnalysisError(
                f"{int(straddle.sum())} elements straddle the kink line x = {k}; "
                "use a mesh with element edges on the kink")


def _rel(err: float, ref: float) -> float:
    return err / ref if ref > 0 else math.nan


def error_norms(sol: FieldSolution, case, params: MaterialParams | None = None,
                quad_order: int | None = None) -> ErrorReport:
    """Errors against the case's exact fields by elementwise Gauss quadrature.

    ``quad_order`` is the number of Gauss points per axis (default k+3).
    Exact fields must be smooth inside every element; meshes that cut a kink
    line raise :class:`AnalysisError`.
    """
    params = params or case.params
    rule = gauss_rule(quad_order if quad_order is not None else sol.formulation.order + 3)
    exact = case.has_exact
    if exact:
        _check_kinks(sol.mesh, case.kinks)
    acc = dict.fromkeys(("eu", "ez", "ec", "nu", "nz", "nc", "gd", "cn", "g1"), 0.0)
    for ch in sol.evaluate(rule.xi, rule.eta, rule.weights):
        w = ch["wdet"]
        d2 = np.sum((ch["grad_u"] - ch["zeta"]) ** 2, axis=-1)
        acc["gd"] += float(np.sum(w * d2))
        acc["g1"] += float(np.sum(w * np.sqrt(d2)))
        acc["cn"] += float(np.sum(w * ch["curl"] ** 2))
        if not exact:
            continue
        x, y = ch["x"][..., 0], ch["x"][..., 1]
        ue = case.u_exact(x, y, params)
        ze = case.zeta_exact(x, y, params)
        if case.curl_zeta_exact is not None:
            ce = np.broadcast_to(case.curl_zeta_exact(x, y, params), x.shape)
        else:
            ce = _fd_curl(lambda a, b: case.zeta_exact(a, b, params), x, y)
        acc["eu"] += float(np.sum(w * (ue - ch["u"]) ** 2))
        acc["ez"] += float(np.sum(w * np.sum((ze - ch["zeta"]) ** 2, axis=-1)))
        acc["ec"] += float(np.sum(w * (ce - ch["curl"]) ** 2))
        acc["nu"] += float(np.sum(w * ue ** 2))
        acc["nz"] += float(np.sum(w * np.sum(ze ** 2, axis=-1)))
        acc["nc"] += float(np.sum(w * ce ** 2))
    dm = sol.dofmap
    nan = math.nan
    if exact:
        l2u, l2z, l2c = (math.sqrt(acc[k]) for k in ("eu", "ez", "ec"))
        hc = math.sqrt(acc["ez"] + acc["ec"])
        rel = (_rel(l2u, math.sqrt(acc["nu"])), _rel(l2z, math.sqrt(acc["nz"])),
               _rel(hc, math.sqrt(acc["nz"] + acc["nc"])))
    else:
        l2u = l2z = l2c = hc = nan
        rel = (nan, nan, nan)
    return ErrorReport(l2u, l2z, l2c, hc, *rel, math.sqrt(acc["gd"]), math.sqrt(acc["cn"]), acc["g1"],
                       dm.n_u, dm.n_zeta, dm.n_m, sol.mesh.h())


def _fd_curl(vf, x, y, h=1e-6):
    d2x = (vf(x + h, y)[..., 1] - vf(x - h, y)[..., 1]) / (2 * h)
    d1y = (vf(x, y + h)[..., 0] - vf(x, y - h)[..., 0]) / (2 * h)
    return d2x - d1y


def energy(sol: FieldSolution, params: MaterialParams, case=None,
           include_loads: bool = True, quad_order: int | None = None) -> float:
    """Quadrature of the stored energy, optionally minus the load work.

    The curvature term is μ_macro L_c²/2 ‖curl ζ‖² or, for the full-gradient
    formulation, μ_macro L_c²/2 ‖∇ζ‖². For ``L_c = inf`` the curvature term
    is taken as zero (the limit problem enforces curl ζ = 0).
    """
    if include_loads and case is None:
        raise ValueError("the load terms need a case")
    rule = gauss_rule(quad_order if quad_order is not None else sol.formulation.order + 3)
    full = sol.formulation.kind == "full-gradient"
    macro = 0.0 if math.isinf(params.L_c) else params.mu_macro * params.L_c ** 2
    total = 0.0
    for ch in sol.evaluate(rule.xi, rule.eta, rule.weights):
        w = ch["wdet"]
        z = ch["zeta"]
        dens = (params.mu_e * np.sum((ch["grad_u"] - z) ** 2, axis=-1)
                + params.mu_micro * np.sum(z ** 2, axis=-1))
        if macro:
            curv = np.sum(ch["zeta_grad"] ** 2, axis=(-2, -1)) if full else ch["curl"] ** 2
            dens = dens + 0.5 * macro * curv
        if include_loads:
            x, y = ch["x"][..., 0], ch["x"][..., 1]
            dens = dens - ch["u"] * case.f(x, y, params) - np.sum(
                z * case.omega(x, y, params), axis=-1)
        total += float(np.sum(w * dens))
    return total


def convergence_rate(records: Sequence[tuple[float, float]]) -> list[float]:
    """Observed orders log(e_i/e_{i+1}) / log(h_i/h_{i+1}); NaN where an error is zero."""
    if len(records) < 2:
        raise ValueError("need at least two (h, error) records")
    rates = []
    for (h0, e0), (h1, e1) in zip(records[:-1], records[1:]):
        if not h1 < h0:
            raise ValueError("h must be strictly decreasing")
        if e0 <= 0 or e1 <= 0 or not (math.isfinite(e0) and math.isfinite(e1)):
            rates.append(math.nan)
        else:
            rates.append(math.log(e0 / e1) / math.log(h0 / h1))
    return rates
