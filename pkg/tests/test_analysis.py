import math

import numpy as np
import pytest

from relaxmm.analysis import AnalysisError, FieldSolution, convergence_rate, energy, error_norms
from relaxmm.assembly import FullGradientNodal, MixedHybrid, PrimalHybrid, assemble
from relaxmm.cases import get_case
from relaxmm.linsys import solve
from relaxmm.mesh import generate_structured


def _solve(name, form, n=8, lc=None, **kw):
    case = get_case(name)
    p = case.params if lc is None else case.params.with_lc(lc)
    m = case.mesh(n, **kw)
    s = assemble(m, form, p, case)
    return case, p, s, FieldSolution(m, s.dofmap, solve(s).x)


def test_norm_identity():
    case, p, _, sol = _solve("robustness", PrimalHybrid(2), 4)
    e = error_norms(sol, case, p)
    assert e.hcurl_zeta ** 2 == pytest.approx(e.l2_zeta ** 2 + e.l2_curl_zeta ** 2, rel=1e-12)


def test_quadrature_convergence():
    case, p, _, sol = _solve("bench_rotation", PrimalHybrid(1), 8, perturb=0.2, seed=2)
    a = error_norms(sol, case, p)
    b = error_norms(sol, case, p, quad_order=6)
    for k in ("l2_u", "l2_zeta", "hcurl_zeta"):
        assert getattr(a, k) == pytest.approx(getattr(b, k), rel=1e-3)


def test_energy_minimization():
    case, p, s, sol = _solve("bench_rotation", PrimalHybrid(1), 4, perturb=0.1, seed=4)
    e0 = energy(sol, p, case)
    rng = np.random.default_rng(5)
    for _ in range(10):
        x = sol.x.copy()
        x[s.free] += 1e-3 * rng.normal(size=s.free.size)
        assert energy(FieldSolution(sol.mesh, sol.dofmap, x), p, case) > e0


def test_energy_is_quadratic_form():
    # ½ xᵀA x − bᵀx on the full system reproduces the quadrature energy (factor 2 in A)
    case, p, s, sol = _solve("robustness", PrimalHybrid(1), 4)
    x = sol.x
    quad = 0.5 * x @ (s.A_full @ x) - x @ s.b_full
    assert energy(sol, p, case) == pytest.approx(quad, rel=1e-9)


def test_energy_lc_inf_and_full_gradient():
    case, p, _, sol = _solve("robustness_limit", MixedHybrid(1), 4, lc=math.inf)
    assert math.isfinite(energy(sol, p, case))
    case, p, _, sol = _solve("coupling", FullGradientNodal(1), 4)
    assert energy(sol, p, include_loads=False) > 0
    with pytest.raises(ValueError):
        energy(sol, p)


def test_kink_straddle_rejected():
    case = get_case("kink")
    m = generate_structured(3, 3, case.domain)
    s = assemble(case.prepare_mesh(m), PrimalHybrid(1), case.params, case)
    with pytest.raises(AnalysisError):
        error_norms(FieldSolution(m, s.dofmap, solve(s).x), case)


def test_graddiff_l1_bounded_by_l2():
    case, p, _, sol = _solve("grad_limit", PrimalHybrid(1), 8, lc=10.0)
    e = error_norms(sol, case, p)
    area = 64.0
    assert 0 < e.graddiff_l1 <= math.sqrt(area) * e.graddiff * (1 + 1e-12)


def test_no_exact_fields_gives_nan():
    case, p, _, sol = _solve("grad_limit", PrimalHybrid(1), 4)
    e = error_norms(sol, case, p)
    assert math.isnan(e.l2_u) and e.curlnorm > 0


def test_convergence_rate():
    r = convergence_rate([(1.0, 1.0), (0.5, 0.25), (0.25, 0.0625)])
    np.testing.assert_allclose(r, [2.0, 2.0])
    assert math.isnan(convergence_rate([(1.0, 1.0), (0.5, 0.0)])[0])
    with pytest.raises(ValueError):
        convergence_rate([(1.0, 1.0)])
    with pytest.raises(ValueError):
        convergence_rate([(0.5, 1.0), (1.0, 0.5)])


def test_at_points():
    case, p, _, sol = _solve("bench_vanishing_zeta", PrimalHybrid(2), 2)
    v = sol.at_points(np.array([0.0]), np.array([0.0]))
    x, y = v["x"][..., 0], v["x"][..., 1]
    np.testing.assert_allclose(v["u"], case.u_exact(x, y, p), atol=1e-10)
