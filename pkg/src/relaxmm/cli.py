"""Command-line driver: single solves, h-ladders, L_c sweeps and energy studies.

Every command writes CSV rows with a fixed schema and a JSON manifest that
echoes the configuration, so a run can be replayed with ``relaxmm replay``.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import platform
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy

from . import __version__
from .analysis import AnalysisError, FieldSolution, energy, error_norms
from .assembly import KINDS, AssemblyError, Formulation, assemble
from .cases import BenchmarkCase, case_names, get_case, strong_residual_check
from .linsys import SolverError, solve
from .mesh import MeshError, QuadMesh, generate_structured, perturb_interior, refine_uniform
from .piola import GeometryError

log = logging.getLogger("relaxmm")

COLUMNS = ("case", "formulation", "order", "nx", "ny", "ndof_u", "ndof_zeta", "ndof_m", "lc",
           "l2_u", "l2_zeta", "l2_curl_zeta", "hcurl_zeta", "rel_hcurl_zeta", "graddiff",
           "curlnorm", "energy_total", "energy_internal", "residual", "wall_ms")
EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_MISMATCH = 0, 2, 3, 4
RESIDUAL_CHECK_TOL = 1e-5
DEFAULT_RTOL = 1e-2


class ConfigError(ValueError):
    """Invalid study configuration."""


@dataclass
class StudyConfig:
    """Everything needed to reproduce one study."""

    command: str
    case: str | None = None
    formulation: str = "primal-hybrid"
    order: int = 1
    grids: list[tuple[int, int]] = field(default_factory=list)
    mesh: str | None = None
    refine: int = 0
    perturb: float = 0.0
    seed: int = 0
    lcs: list[float] | None = None
    quad: int | None = None
    load_quad: int | None = None
    zeta_components: str = "tangential"
    out: str | None = None
    threads: int = 1
    golden: str | None = None
    timing: bool = True

    def validate(self) -> None:
        if self.command in ("mesh-gen", "residual-check"):
            return
        if self.case is None:
            raise ConfigError("--case is required")
        if self.formulation not in KINDS:
            raise ConfigError(f"unknown formulation {self.formulation!r}; choose from {KINDS}")
        if self.order not in (1, 2):
            raise ConfigError(f"--order must be 1 or 2, got {self.order}")
        if self.mesh is None and not self.grids:
            raise ConfigError("give --grid or --mesh")
        if self.mesh is not None and self.grids:
            raise ConfigError("--grid and --mesh are mutually exclusive")
        if self.command == "convergence" and self.n_meshes() < 2:
            raise ConfigError("a convergence ladder needs at least two grids "
                              "(--grid n1,n2,… or --mesh FILE --refine N)")
        if self.command in ("solve", "lc-sweep", "energy-sweep") and self.n_meshes() != 1:
            raise ConfigError(f"{self.command} runs on a single grid")
        if self.command == "solve" and self.lcs is not None and len(self.lcs) != 1:
            raise ConfigError("solve takes a single --lc value")
        if self.command == "lc-sweep" and (self.lcs is None or len(self.lcs) < 2):
            raise ConfigError("an L_c sweep needs at least two --lc values")
        if self.threads < 1:
            raise ConfigError("--threads must be positive")
        case = get_case(self.case)
        kinds = (("primal-hybrid", "full-gradient") if self.command == "energy-sweep"
                 else (self.formulation,))
        for kind in kinds:
            form = Formulation(kind, self.order)
            for lc in self.lcs if self.lcs is not None else [case.params.L_c]:
                try:
                    form.check_params(case.params.with_lc(lc))
                except AssemblyError as exc:
                    raise ConfigError(f"L_c = {lc}: {exc}") from None

    def n_meshes(self) -> int:
        return self.refine + 1 if self.mesh is not None else len(self.grids)


# ----------------------------------------------------------------- parsing
def parse_grid(text: str) -> list[tuple[int, int]]:
    """``"4,8"`` → [(4, 4), (8, 8)]; ``"8x4"`` → [(8, 4)]."""
    grids = []
    for tok in text.split(","):
        parts = tok.lower().split("x")
        try:
            nums = [int(p) for p in parts]
        except ValueError:
            raise ConfigError(f"bad grid entry {tok!r}; use n or nx x ny") from None
        if len(nums) not in (1, 2) or min(nums) < 1:
            raise ConfigError(f"bad grid entry {tok!r}")
        grids.append((nums[0], nums[-1]))
    return grids


def parse_lc(text: str) -> list[float]:
    """Comma-separated L_c values; ``inf`` selects the limit problem."""
    out = []
    for tok in text.split(","):
        try:
            v = float(tok)
        except ValueError:
            raise ConfigError(f"bad L_c value {tok!r}") from None
        if v < 0 or math.isnan(v):
            raise ConfigError(f"L_c must be nonnegative, got {tok!r}")
        out.append(v)
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="relaxmm", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"relaxmm {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, case_required=True):
        sp.add_argument("--case", required=case_required, choices=case_names())
        sp.add_argument("--formulation", default="primal-hybrid", choices=KINDS)
        sp.add_argument("--order", type=int, default=1)
        sp.add_argument("--grid", type=parse_grid, help="n[,n…] or nxXny")
        sp.add_argument("--mesh", help="mesh JSON file (see mesh-gen)")
        sp.add_argument("--refine", type=int, default=0,
                        help="uniform refinements of --mesh for ladders")
        sp.add_argument("--perturb", type=float, default=0.0,
                        help="interior node perturbation as a fraction of h")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--lc", type=parse_lc, help="v[,v…]; 'inf' for the limit problem")
        sp.add_argument("--quad", type=int, help="Gauss points per axis for the stiffness")
        sp.add_argument("--load-quad", type=int, help="Gauss points per axis for the loads")
        sp.add_argument("--zeta-components", default="tangential",
                        choices=("tangential", "full"),
                        help="ζ boundary components fixed by nodal formulations")
        sp.add_argument("--out", help="CSV output path (default stdout)")
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--golden", help="JSON file of expected values")
        sp.add_argument("--no-timing", action="store_true",
                        help="write wall_ms as 0 for bitwise reproducible CSV")

    for name, helptext in (("solve", "one solve with error norms and energy"),
                           ("convergence", "h-convergence ladder with observed rates"),
                           ("lc-sweep", "sweep over L_c on one grid"),
                           ("energy-sweep", "relaxed vs full-gradient energy over L_c")):
        common(sub.add_parser(name, help=helptext))
    mg = sub.add_parser("mesh-gen", help="write a structured (optionally perturbed) mesh")
    common(mg, case_required=False)
    mg.add_argument("--domain", type=lambda s: tuple(float(v) for v in s.split(",")),
                    help="x0,x1,y0,y1 when no --case is given")
    rc = sub.add_parser("residual-check", help="manufactured-solution strong-form oracle")
    rc.add_argument("--case", choices=case_names(), help="default: every case")
    rc.add_argument("--lc", type=parse_lc)
    rc.add_argument("--samples", type=int, default=100)
    rc.add_argument("--seed", type=int, default=0)
    rc.add_argument("--out")
    rc.add_argument("--threads", type=int, default=1)
    rp = sub.add_parser("replay", help="re-run the study recorded in a manifest")
    rp.add_argument("manifest")
    return p


def config_from_args(ns: argparse.Namespace) -> StudyConfig:
    return StudyConfig(
        command=ns.command, case=ns.case,
        formulation=getattr(ns, "formulation", "primal-hybrid"),
        order=getattr(ns, "order", 1), grids=getattr(ns, "grid", None) or [],
        mesh=getattr(ns, "mesh", None), refine=getattr(ns, "refine", 0),
        perturb=getattr(ns, "perturb", 0.0), seed=ns.seed, lcs=ns.lc,
        quad=getattr(ns, "quad", None), load_quad=getattr(ns, "load_quad", None),
        zeta_components=getattr(ns, "zeta_components", "tangential"), out=ns.out,
        threads=ns.threads, golden=getattr(ns, "golden", None),
        timing=not getattr(ns, "no_timing", False))


# ----------------------------------------------------------------- running
def _meshes(cfg: StudyConfig, case: BenchmarkCase) -> list[tuple[QuadMesh, int | str, int | str]]:
    if cfg.mesh is not None:
        m = case.prepare_mesh(QuadMesh.load(cfg.mesh))
        out = [(m, "", "")]
        for _ in range(cfg.refine):
            m = refine_uniform(m)
            out.append((m, "", ""))
        return out
    return [(case.mesh(nx, ny, cfg.perturb, cfg.seed), nx, ny) for nx, ny in cfg.grids]


def _nan_row() -> dict:
    return {c: math.nan for c in COLUMNS}


def run_one(case: BenchmarkCase, mesh: QuadMesh, form: Formulation, lc: float,
            cfg: StudyConfig, nx="", ny="") -> tuple[dict, bool]:
    """Assemble, solve and post-process one configuration.

    Returns the CSV row and whether the solver contract held. A solver
    failure still yields a row with the achieved residual and NaN errors.
    """
    params = case.params.with_lc(lc)
    if cfg.zeta_components != "tangential":
        case = replace(case, zeta_components=cfg.zeta_components)
    row = _nan_row()
    row.update(case=case.name, formulation=form.kind, order=form.order, nx=nx, ny=ny, lc=lc)
    system = assemble(mesh, form, params, case, quad=cfg.quad, load_quad=cfg.load_quad)
    dm = system.dofmap
    row.update(ndof_u=dm.n_u, ndof_zeta=dm.n_zeta, ndof_m=dm.n_m)
    ok = True
    try:
        rep = solve(system)
    except SolverError as exc:
        log.error("%s", exc)
        if exc.report is not None:
            row.update(residual=exc.report.residual, wall_ms=exc.report.wall_ms)
        ok = False
        rep = exc.report
        if rep is None:
            return row, False
    sol = FieldSolution(mesh, dm, rep.x)
    if ok:
        err = error_norms(sol, case, params)
        row.update({k: getattr(err, k) for k in (
            "l2_u", "l2_zeta", "l2_curl_zeta", "hcurl_zeta", "rel_hcurl_zeta",
            "graddiff", "curlnorm")})
        row["graddiff_l1"] = err.graddiff_l1
        row["energy_total"] = energy(sol, params, case)
        row["energy_internal"] = energy(sol, params, include_loads=False)
    row.update(residual=rep.residual, wall_ms=rep.wall_ms if cfg.timing else 0.0)
    return row, ok


def _rates(rows: list[dict], x: Sequence[float], cols: Sequence[str], prefix: str,
           decay_in_x: bool = False) -> None:
    """Append ``<prefix><col>`` entries between consecutive rows.

    With ``decay_in_x`` false the rate is log(e₀/e₁)/log(x₀/x₁) (mesh size);
    otherwise log(e₀/e₁)/log(x₁/x₀), so error ∝ x⁻² gives 2.
    """
    for col in cols:
        rows[0][prefix + col] = math.nan
        for i in range(1, len(rows)):
            e0, e1 = rows[i - 1][col], rows[i][col]
            x0, x1 = (x[i], x[i - 1]) if decay_in_x else (x[i - 1], x[i])
            vals = (e0, e1, x0, x1)
            ok = all(math.isfinite(v) and v > 0 for v in vals) and x0 != x1
            rows[i][prefix + col] = math.log(e0 / e1) / math.log(x0 / x1) if ok else math.nan


def cmd_solve(cfg: StudyConfig) -> tuple[list[dict], bool]:
    case = get_case(cfg.case)
    (mesh, nx, ny), = _meshes(cfg, case)
    lc = cfg.lcs[0] if cfg.lcs else case.params.L_c
    row, ok = run_one(case, mesh, Formulation(cfg.formulation, cfg.order), lc, cfg, nx, ny)
    return [row], ok


def cmd_convergence(cfg: StudyConfig) -> tuple[list[dict], bool]:
    case = get_case(cfg.case)
    form = Formulation(cfg.formulation, cfg.order)
    lc = cfg.lcs[0] if cfg.lcs else case.params.L_c
    rows, hs, ok = [], [], True
    for mesh, nx, ny in _meshes(cfg, case):
        row, good = run_one(case, mesh, form, lc, cfg, nx, ny)
        rows.append(row)
        hs.append(mesh.h())
        ok &= good
    _rates(rows, hs, ("l2_u", "l2_zeta", "hcurl_zeta", "rel_hcurl_zeta"), "rate_")
    return rows, ok


def cmd_lc_sweep(cfg: StudyConfig) -> tuple[list[dict], bool]:
    case = get_case(cfg.case)
    (mesh, nx, ny), = _meshes(cfg, case)
    form = Formulation(cfg.formulation, cfg.order)
    rows, ok = [], True
    for lc in cfg.lcs:
        row, good = run_one(case, mesh, form, lc, cfg, nx, ny)
        rows.append(row)
        ok &= good
    # decay orders in L_c: a rate of 2 means error ∝ L_c⁻²
    _rates(rows, cfg.lcs, ("hcurl_zeta", "rel_hcurl_zeta", "graddiff", "curlnorm"),
           "lc_rate_", decay_in_x=True)
    return rows, ok


def cmd_energy_sweep(cfg: StudyConfig) -> tuple[list[dict], bool]:
    case = get_case(cfg.case)
    (mesh, nx, ny), = _meshes(cfg, case)
    lcs = cfg.lcs if cfg.lcs is not None else [case.params.L_c]
    rows, ok = [], True
    for kind in ("primal-hybrid", "full-gradient"):
        block = []
        for lc in lcs:
            row, good = run_one(case, mesh, Formulation(kind, cfg.order), lc, cfg, nx, ny)
            block.append(row)
            ok &= good
        block[0]["energy_ratio"] = math.nan
        for prev, row in zip(block[:-1], block[1:]):
            row["energy_ratio"] = row["energy_total"] / prev["energy_total"]
        rows += block
    return rows, ok


def cmd_mesh_gen(cfg: StudyConfig, domain=None) -> QuadMesh:
    if len(cfg.grids) != 1:
        raise ConfigError("mesh-gen needs exactly one --grid entry")
    nx, ny = cfg.grids[0]
    if cfg.case is not None:
        return get_case(cfg.case).mesh(nx, ny, cfg.perturb, cfg.seed)
    mesh = generate_structured(nx, ny, domain or (0.0, 1.0, 0.0, 1.0))
    return perturb_interior(mesh, cfg.perturb, cfg.seed) if cfg.perturb else mesh


def cmd_residual_check(cfg: StudyConfig, samples: int) -> tuple[list[dict], bool]:
    names = [cfg.case] if cfg.case else case_names()
    rows, ok = [], True
    for name in names:
        case = get_case(name)
        params = case.params.with_lc(cfg.lcs[0]) if cfg.lcs else None
        r1, r2 = strong_residual_check(case, params, n_samples=samples, seed=cfg.seed)
        good = max(r1, r2) <= RESIDUAL_CHECK_TOL
        ok &= good
        rows.append({"case": name, "residual_u": r1, "residual_zeta": r2,
                     "status": "pass" if good else "fail"})
    return rows, ok


# ----------------------------------------------------------------- output
def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "inf" if math.isinf(v) else ("nan" if math.isnan(v) else repr(float(v)))
    return str(v)


def write_csv(rows: list[dict], stream) -> None:
    cols = list(COLUMNS) if "formulation" in rows[0] else list(rows[0])
    extra = [k for r in rows for k in r if k not in cols]
    cols += list(dict.fromkeys(extra))
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in cols])


def manifest(cfg: StudyConfig, argv: Sequence[str]) -> dict:
    c = asdict(cfg)
    c["lcs"] = None if cfg.lcs is None else [_fmt(v) for v in cfg.lcs]
    return {"tool": "relaxmm", "version": __version__, "argv": list(argv), "config": c,
            "seeds": {"perturb": cfg.seed}, "numpy": np.__version__,
            "scipy": scipy.__version__, "python": platform.python_version()}


def compare_golden(rows: list[dict], path: str) -> list[str]:
    """Compare rows against a golden JSON file; return mismatch messages.

    The file holds ``{"tolerances": {col: rtol | {"rtol": r, "atol": a}},
    "rows": [{...}]}``. Each golden row is matched to the first output row
    agreeing on its key columns (case, formulation, order, nx, ny, lc);
    remaining entries are compared within the column tolerance (default
    relative 1e-2).
    """
    gold = json.loads(Path(path).read_text())
    tols = gold.get("tolerances", {})
    keys = ("case", "formulation", "order", "nx", "ny", "lc")
    problems = []
    for g in gold["rows"]:
        sel = {k: g[k] for k in keys if k in g}
        match = [r for r in rows if all(_same(r.get(k), v) for k, v in sel.items())]
        if not match:
            problems.append(f"no output row matches {sel}")
            continue
        r = match[0]
        for col, want in g.items():
            if col in sel:
                continue
            t = tols.get(col, DEFAULT_RTOL)
            rtol, atol = (t, 0.0) if not isinstance(t, dict) else (t.get("rtol", 0.0),
                                                                    t.get("atol", 0.0))
            got = float(r.get(col, math.nan))
            if not abs(got - want) <= atol + rtol * abs(want):
                problems.append(f"{sel} {col}: got {got:.6g}, expected {want:.6g} "
                                f"(rtol {rtol:g}, atol {atol:g})")
    return problems


def _same(a, b) -> bool:
    if isinstance(b, (int, float)) and not isinstance(b, bool):
        try:
            return float(a) == float(b)
        except (TypeError, ValueError):
            return False
    return str(a) == str(b)


def _limit_threads(n: int):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return None
    return threadpool_limits(limits=n)


def run(cfg: StudyConfig, argv: Sequence[str], samples: int = 100, domain=None) -> int:
    cfg.validate()
    _limit_threads(cfg.threads)
    if cfg.command == "mesh-gen":
        mesh = cmd_mesh_gen(cfg, domain)
        if cfg.out:
            mesh.save(cfg.out)
            _write_manifest(cfg, argv, Path(cfg.out))
        else:
            sys.stdout.write(mesh.to_json() + "\n")
        return EXIT_OK
    handlers = {"solve": cmd_solve, "convergence": cmd_convergence,
                "lc-sweep": cmd_lc_sweep, "energy-sweep": cmd_energy_sweep}
    if cfg.command == "residual-check":
        rows, ok = cmd_residual_check(cfg, samples)
    else:
        rows, ok = handlers[cfg.command](cfg)
    buf = io.StringIO()
    write_csv(rows, buf)
    if cfg.out:
        Path(cfg.out).write_text(buf.getvalue())
        _write_manifest(cfg, argv, Path(cfg.out))
    else:
        sys.stdout.write(buf.getvalue())
        sys.stderr.write(json.dumps(manifest(cfg, argv)) + "\n")
    if cfg.command == "residual-check":
        return EXIT_OK if ok else EXIT_MISMATCH
    if not ok:
        return EXIT_SOLVER
    if cfg.golden:
        problems = compare_golden(rows, cfg.golden)
        for msg in problems:
            log.error("golden mismatch: %s", msg)
        if problems:
            return EXIT_MISMATCH
    return EXIT_OK


def _write_manifest(cfg: StudyConfig, argv, out: Path) -> None:
    path = out.with_name(out.name + ".manifest.json")
    path.write_text(json.dumps(manifest(cfg, argv), indent=2) + "\n")


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        if ns.command == "replay":
            recorded = json.loads(Path(ns.manifest).read_text())["argv"]
            return main(recorded)
        cfg = config_from_args(ns)
        return run(cfg, argv, samples=getattr(ns, "samples", 100),
                   domain=getattr(ns, "domain", None))
    except (ConfigError, AssemblyError, MeshError, GeometryError, AnalysisError,
            KeyError, OSError, json.JSONDecodeError) as exc:
        log.error("%s", exc.args[0] if isinstance(exc, KeyError) else exc)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
