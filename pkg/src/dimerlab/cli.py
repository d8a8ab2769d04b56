"""Batch front-end: config parsing, verification suites, tables and plots.

A single JSON config drives every subcommand:

    {
      "domain": [0.0, 0.0, 1.0, 1.0],
      "mesh_eps": 0.0625,
      "potential": {"kind": "linear", "a": 1.0},
      "grid_h": 0.0078125,
      "suite": "discrete-identities",
      "seed": 0,
      "inject_phase_error": false
    }

Exit code of `verify` is 0 iff every selected check passes its threshold;
suites whose hypotheses fail (log-convexity) are skipped with a message.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import geometry, potential as potential_mod
from .geometry import build_square_patch, build_square_superposition, save_isoradial
from .inverse import (
    boundary_face_path,
    dual_path,
    edge_correlation,
    edge_probability,
    enumerate_dimers,
    height_moment_determinant,
    height_moment_enumeration,
    invert_direct,
    invert_via_green,
    massive_cr_residual,
    telescope_dual,
)
from .operators import (
    assemble_kasteleyn,
    assemble_laplacian,
    discrete_green,
    green_formula_residual,
    resolvent_check,
    verify_block_diagonal,
)
from .potential import discrete_mass, make_potential
from .report import heatmap_svg, loglog_svg, write_csv

DEFAULT_CONFIG = {
    "domain": [0.0, 0.0, 1.0, 1.0],
    "mesh_eps": 1.0 / 12.0,
    "potential": {"kind": "linear", "a": 1.0},
    "grid_h": 1.0 / 96.0,
    "seed": 0,
    "inject_phase_error": False,
}


def load_config(path: str | None) -> dict:
    cfg = dict(DEFAULT_CONFIG)
    if path:
        with open(path) as fh:
            cfg.update(json.load(fh))
    return cfg


def _graph_and_field(cfg):
    g = build_square_superposition(
        tuple(cfg["domain"]), cfg["mesh_eps"],
        complex(cfg.get("corner_hint_x", (cfg["domain"][0] + cfg["domain"][2]) / 2),
                cfg["domain"][1]),
    )
    f = make_potential(cfg["potential"])
    return g, f


def _corrupt(K):
    """Negative control: flip one Kasteleyn phase by i."""
    mat = K.matrix.tolil()
    rows, cols = mat.nonzero()
    mat[rows[0], cols[0]] *= 1j
    K.matrix = mat.tocsr()
    return K


def _assumption2_ok(cfg, f) -> bool:
    x0, y0, x1, y1 = cfg["domain"]
    xs = np.linspace(x0 + 1e-3, x1 - 1e-3, 16)
    ys = np.linspace(y0 + 1e-3, y1 - 1e-3, 16)
    probes = np.array([complex(a, b) for a in xs for b in ys])
    return bool(min(f.mass(z) for z in probes) >= -1e-12)


def suite_discrete_identities(cfg) -> dict:
    g, f = _graph_and_field(cfg)
    if not _assumption2_ok(cfg, f):
        return {"suite": "discrete-identities", "skipped": True,
                "reason": "log-convexity (positive mass) fails on the probe grid"}
    checks = []
    K = assemble_kasteleyn(g, f)
    if cfg.get("inject_phase_error"):
        K = _corrupt(K)
    rep = verify_block_diagonal(g, f, K)
    checks.append(("block-offdiagonal", rep["off_block_max"], 1e-10))
    checks.append(("block-primal", rep["primal_block_rel_dev"], 1e-10))

    whites = [0, g.n_white() // 3, g.n_white() // 2, g.n_white() - 1]
    kinv = invert_direct(g, f, whites, K)
    checks.append(("kasteleyn-inverse", kinv.residual, 1e-10))

    _, sigma, dev = invert_via_green(g, f, whites[:2], reference=invert_direct(g, f, whites[:2], K))
    checks.append(("green-formula-route", dev, 1e-10))

    w2 = whites[1]
    cr = max(abs(massive_cr_residual(g, f, kinv, w1, w2))
             for w1 in range(g.n_white()) if w1 != w2)
    checks.append(("massive-cauchy-riemann", cr, 1e-12))

    tel = 0.0
    duals = [d for d in range(g.base.n_dual()) if d != g.corner_bstar][:6]
    for y in duals:
        try:
            pw = dual_path(g, y, avoid_white=w2)
        except ValueError:
            continue
        val = telescope_dual(g, f, kinv, pw, w2)
        tel = max(tel, abs(val - kinv.entry(g.black_of_dual(y), w2)))
    checks.append(("dual-telescoping", tel, 1e-10))

    sources = [0, g.n_primal // 2, g.n_primal - 1]
    checks.append(("resolvent-discrete", resolvent_check(g, f, sources), 1e-10))

    rng = np.random.default_rng(cfg["seed"])
    F = rng.normal(size=g.n_primal)
    G = rng.normal(size=g.n_primal)
    subset = np.arange(g.n_primal // 4, 3 * g.n_primal // 4)
    checks.append(("green-formula", green_formula_residual(g, subset, F, G), 1e-9))

    out = [{"name": n, "residual": float(r), "tol": t, "pass": bool(r <= t)}
           for n, r, t in checks]
    return {"suite": "discrete-identities", "skipped": False, "checks": out,
            "pass": all(c["pass"] for c in out)}


def suite_enumeration(cfg) -> dict:
    f = make_potential(cfg["potential"])
    g = build_square_patch(2, 2, corner_hint=0.05 + 0j)
    K = assemble_kasteleyn(g, f)
    if cfg.get("inject_phase_error"):
        K = _corrupt(K)
    ens = enumerate_dimers(g, f)
    kinv = invert_direct(g, f, list(range(g.n_white())), K)
    checks = []
    worst = 0.0
    for w in range(g.n_white()):
        for b, _ in g.incidence[w]:
            worst = max(worst, abs(ens.edge_probability(w, b)
                                   - edge_probability(g, f, kinv, w, b, K)))
    checks.append(("edge-probabilities", worst, 1e-9))
    edges = [(0, g.incidence[0][0][0]), (5, g.incidence[5][0][0]),
             (9, g.incidence[9][1][0])]
    for k in (2, 3):
        dev = abs(ens.joint_centered(edges[:k]) - edge_correlation(g, f, edges[:k], kinv, K))
    checks.append(("edge-correlations", dev, 1e-9))
    paths = [boundary_face_path(g, (2, 1)), boundary_face_path(g, (4, 2))]
    dev = abs(height_moment_enumeration(g, f, paths, ens)
              - height_moment_determinant(g, f, paths, kinv, K))
    checks.append(("height-moments", dev, 1e-9))
    out = [{"name": n, "residual": float(r), "tol": t, "pass": bool(r <= t)}
           for n, r, t in checks]
    return {"suite": "enumeration", "skipped": False, "checks": out,
            "pass": all(c["pass"] for c in out)}


def suite_continuum_bv(cfg) -> dict:
    from .continuum import (Grid2D, KernelSuite, bv_boundary_residual,
                            gauge_bv2, kappa0_map, sign_determinant,
                            sqrt_gprime_disk)
    f = make_potential(cfg["potential"])
    if not _assumption2_ok(cfg, f):
        return {"suite": "continuum-bv", "skipped": True,
                "reason": "log-convexity (positive mass) fails on the probe grid"}
    h = cfg.get("grid_h", 1 / 96)
    grid = Grid2D.disk(1.0, h=h)
    zero = make_potential({"kind": "zero"})
    suite = KernelSuite(grid, zero, beta_star=-1j)
    z = 0.25 + 0.1j
    checks = []
    from .continuum import disk_to_halfplane as gmap, disk_to_halfplane_deriv as gpmap
    errs = [abs(suite.kappa_at(w, z) - kappa0_map(w, z, gmap, gpmap))
            / abs(kappa0_map(w, z, gmap, gpmap))
            for w in (0.55 + 0.2j, -0.2 + 0.35j, 0.1 - 0.4j)]
    checks.append(("kappa-massless", max(errs), 0.03))
    F0 = lambda w, zz: suite.f_at(w, zz)[0]
    F1 = lambda w, zz: suite.f_at(w, zz)[1]
    probes = [(1 - 3 * h) * np.exp(1j * a) for a in np.linspace(0.3, 5.9, 6)]
    taus = [1j * np.exp(1j * a) for a in np.linspace(0.3, 5.9, 6)]
    checks.append(("bv1-boundary", bv_boundary_residual(F0, F1, "BV1", probes, taus, z), 10 * h))
    checks.append(("bv2-boundary", bv_boundary_residual(F0, F1, "BV2", probes, taus, z,
                                                        sqrt_gp=sqrt_gprime_disk), 10 * h))
    pts = [0.3 + 0.2j, -0.25 + 0.15j, 0.05 - 0.35j]
    F0t, F1t = gauge_bv2(F0, F1, sqrt_gprime_disk)
    worst = 0.0
    for k in range(8):
        s = tuple(int(b) for b in np.binary_repr(k, 3))
        d1 = sign_determinant(F0, F1, pts, s)
        d2 = sign_determinant(F0t, F1t, pts, s)
        worst = max(worst, abs(d1 - d2) / max(abs(d1), 1e-30))
    checks.append(("det-gauge-invariance", worst, 1e-10))
    out = [{"name": n, "residual": float(r), "tol": t, "pass": bool(r <= t)}
           for n, r, t in checks]
    return {"suite": "continuum-bv", "skipped": False, "checks": out,
            "pass": all(c["pass"] for c in out)}


SUITES = {
    "discrete-identities": suite_discrete_identities,
    "enumeration": suite_enumeration,
    "continuum-bv": suite_continuum_bv,
}


def cmd_verify(cfg, outdir: str, suite_names: list[str]) -> int:
    results = []
    for name in suite_names:
        if name not in SUITES:
            print(f"unknown suite {name!r}; available: {sorted(SUITES)}", file=sys.stderr)
            return 2
        res = SUITES[name](cfg)
        results.append(res)
        if res.get("skipped"):
            print(f"[skip] {name}: {res['reason']}")
        else:
            for c in res["checks"]:
                mark = "ok " if c["pass"] else "FAIL"
                print(f"[{mark}] {name}/{c['name']}: residual {c['residual']:.3e} "
                      f"(tol {c['tol']:.1e})")
    summary = {"results": results,
               "pass": all(r.get("pass", True) for r in results)}
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "verify.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return 0 if summary["pass"] else 1


def cmd_build_graph(cfg, outdir: str) -> int:
    g, _ = _graph_and_field(cfg)
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, "graph.isoradial")
    save_isoradial(g, path)
    print(f"wrote {path}: {g.n_primal} primal, {g.base.n_dual()} dual, "
          f"{g.n_white()} white vertices")
    return 0


def cmd_green(cfg, outdir: str) -> int:
    g, f = _graph_and_field(cfg)
    sources = [0, g.n_primal // 2]
    table = discrete_green(g, f, sources)
    os.makedirs(outdir, exist_ok=True)
    rows = []
    for k, s in enumerate(sources):
        for t in range(g.n_primal):
            rows.append([s, t, table.columns[t, k], 0.0])
    write_csv(os.path.join(outdir, "green.csv"),
              ["source_ix", "target_ix", "value_re", "value_im"], rows)
    print(f"wrote green.csv ({len(rows)} rows, convention {table.convention})")
    return 0


def cmd_invert(cfg, outdir: str) -> int:
    g, f = _graph_and_field(cfg)
    K = assemble_kasteleyn(g, f)
    whites = [0, g.n_white() // 2, g.n_white() - 1]
    kinv = invert_direct(g, f, whites, K)
    os.makedirs(outdir, exist_ok=True)
    rows = []
    for k, w in enumerate(whites):
        for b in range(g.n_black()):
            v = kinv.columns[b, k]
            rows.append([b, w, v.real, v.imag])
    write_csv(os.path.join(outdir, "kinv.csv"),
              ["black_ix", "white_ix", "value_re", "value_im"], rows)
    print(f"wrote kinv.csv (residual {kinv.residual:.2e})")
    return 0


def cmd_correlate(cfg, outdir: str) -> int:
    f = make_potential(cfg["potential"])
    g = build_square_patch(3, 2, corner_hint=0.05 + 0j)
    K = assemble_kasteleyn(g, f)
    kinv = invert_direct(g, f, list(range(g.n_white())), K)
    edges = [(w, g.incidence[w][0][0]) for w in (0, 3, 7)]
    rows = []
    for k in (2, 3):
        val = edge_correlation(g, f, edges[:k], kinv, K)
        rows.append([k, val])
    os.makedirs(outdir, exist_ok=True)
    write_csv(os.path.join(outdir, "correlations.csv"), ["k", "centered_moment"], rows)
    print("wrote correlations.csv")
    return 0


def cmd_heights(cfg, outdir: str) -> int:
    f = make_potential(cfg["potential"])
    g = build_square_patch(2, 2, corner_hint=0.05 + 0j)
    K = assemble_kasteleyn(g, f)
    kinv = invert_direct(g, f, list(range(g.n_white())), K)
    paths = [boundary_face_path(g, (2, 1)), boundary_face_path(g, (4, 2))]
    val = height_moment_determinant(g, f, paths, kinv, K)
    os.makedirs(outdir, exist_ok=True)
    write_csv(os.path.join(outdir, "heights.csv"),
              ["face1", "face2", "moment"], [["(2,1)", "(4,2)", val]])
    print(f"wrote heights.csv (E[h h] = {val:.6f})")
    return 0


def cmd_kernels(cfg, outdir: str) -> int:
    from .continuum import Grid2D, KernelSuite
    f = make_potential(cfg["potential"])
    x0, y0, x1, y1 = cfg["domain"]
    grid = Grid2D.rectangle(x0, y0, x1, y1, cfg.get("grid_h", 1 / 96))
    suite = KernelSuite(grid, f, beta_star=complex((x0 + x1) / 2, y0))
    z = complex((x0 + 3 * x1) / 4, (3 * y0 + y1) / 4)
    F0, F1 = suite.f_pair(z)
    os.makedirs(outdir, exist_ok=True)
    rows = []
    for j in range(grid.ny):
        for i in range(grid.nx):
            v = F0.values[j, i]
            if np.isfinite(v):
                rows.append([i, j, v.real, v.imag])
    write_csv(os.path.join(outdir, "kernel_F0.csv"),
              ["i", "j", "value_re", "value_im"], rows)
    heatmap_svg(os.path.join(outdir, "kernel_F0.svg"), F0.values,
                title=f"|F0(., {z:.3f})|")
    print("wrote kernel_F0.csv and kernel_F0.svg")
    return 0


def cmd_fredholm(cfg, outdir: str) -> int:
    from .fredholm import (build_path_kernel, bump_function, cumulant_trace,
                           det4_mgf, massless_correlators, schatten4_norm)
    corr = massless_correlators()
    op = build_path_kernel(corr, n_space_side=6, n_time=24)
    f = bump_function(0.7)
    c2 = cumulant_trace(op, f, 2)
    s4 = schatten4_norm(op)
    mgf, ld_eig, ld_ser = det4_mgf(op, f, 0.05)
    os.makedirs(outdir, exist_ok=True)
    summary = {
        "n": 2,
        "N_list": [op.n_nodes()],
        "trace_values": [c2],
        "schatten4_norm": s4,
        "det4_eig_vs_series": abs(ld_eig - ld_ser),
        "mgf_mu_0.05": [mgf.real, mgf.imag],
    }
    with open(os.path.join(outdir, "fredholm.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    print(f"wrote fredholm.json (cumulant2 {c2:.5f}, schatten4 {s4:.4f})")
    return 0


def cmd_table(cfg, outdir: str, artifact: str) -> int:
    if artifact == "green-convergence":
        from .continuum import Grid2D, GreenSolver
        f = make_potential(cfg["potential"])
        grid = Grid2D.rectangle(*cfg["domain"], cfg.get("grid_h", 1 / 96))
        solver = GreenSolver(grid, f.mass)
        probes = [(0.25 + 0.375j, 0.625 + 0.5j), (0.375 + 0.25j, 0.5 + 0.75j)]
        rows = []
        eps_list = [1 / 8, 1 / 16]
        for eps in eps_list:
            g = build_square_superposition(tuple(cfg["domain"]), eps)
            for k, (w, z) in enumerate(probes):
                i1 = int(np.argmin(np.abs(g.base.vertices - w)))
                i2 = int(np.argmin(np.abs(g.base.vertices - z)))
                tab = discrete_green(g, f, [i1])
                disc = tab.columns[i2, 0]
                cont = solver.column(grid.node_near(g.base.vertices[i1]))[
                    grid.node_near(g.base.vertices[i2])]
                err = abs(disc - cont)
                rows.append([eps, k, disc, cont, err, err / eps])
        os.makedirs(outdir, exist_ok=True)
        write_csv(os.path.join(outdir, "green_convergence.csv"),
                  ["eps", "probe", "discrete", "continuum", "err", "err_over_eps"],
                  rows)
        print("wrote green_convergence.csv")
        return 0
    print(f"unknown artifact {artifact!r}", file=sys.stderr)
    return 2


def cmd_plot(cfg, outdir: str, artifact: str) -> int:
    if artifact == "kernel-heatmap":
        return cmd_kernels(cfg, outdir)
    if artifact == "green-convergence":
        rc = cmd_table(cfg, outdir, "green-convergence")
        if rc:
            return rc
        import csv
        xs, ys = [], {}
        with open(os.path.join(outdir, "green_convergence.csv")) as fh:
            for row in csv.DictReader(fh):
                if row["probe"] == "0":
                    xs.append(float(row["eps"]))
                    ys.setdefault("err", []).append(float(row["err"]))
        loglog_svg(os.path.join(outdir, "green_convergence.svg"), xs, ys,
                   title="discrete vs continuum Green error")
        print("wrote green_convergence.svg")
        return 0
    print(f"unknown artifact {artifact!r}", file=sys.stderr)
    return 2


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="dimerlab")
    ap.add_argument("--config", default=None)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--threads", type=int, default=None)
    ap.add_argument("--out", default="out")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("build-graph", "green", "invert", "correlate", "heights",
                 "kernels", "fredholm"):
        sub.add_parser(name)
    pv = sub.add_parser("verify")
    pv.add_argument("--suite", action="append", default=None)
    pt = sub.add_parser("table")
    pt.add_argument("artifact")
    pp = sub.add_parser("plot")
    pp.add_argument("artifact")

    args = ap.parse_args(argv)
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.threads is not None:
        os.environ["OMP_NUM_THREADS"] = str(args.threads)

    if args.command == "verify":
        suites = args.suite or ["discrete-identities"]
        return cmd_verify(cfg, args.out, suites)
    if args.command == "build-graph":
        return cmd_build_graph(cfg, args.out)
    if args.command == "green":
        return cmd_green(cfg, args.out)
    if args.command == "invert":
        return cmd_invert(cfg, args.out)
    if args.command == "correlate":
        return cmd_correlate(cfg, args.out)
    if args.command == "heights":
        return cmd_heights(cfg, args.out)
    if args.command == "kernels":
        return cmd_kernels(cfg, args.out)
    if args.command == "fredholm":
        return cmd_fredholm(cfg, args.out)
    if args.command == "table":
        return cmd_table(cfg, args.out, args.artifact)
    if args.command == "plot":
        return cmd_plot(cfg, args.out, args.artifact)
    return 2


if __name__ == "__main__":
    raise SystemExit(main())
