"""Mesh-refinement suites: Green convergence and K^{-1} scaling limits.

The inverse Kasteleyn entries are compared against the continuum law

    K^{-1}(x1, w2) ~ sigma *  sqrt(tan th) < conj(S kappa )(x1,w2), x2+ - x2- >
    K^{-1}(y1, w2) ~ sigma * i sqrt(tan th) < conj(S kappa*)(y1,w2), x2+ - x2- >

with S = INVK_SCALE the kernel-normalization correspondence and sigma
the global sign fixed by the package Green convention (sigma = -1); the
sign is calibrated once per run from the first probe and must then fit
every other probe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .continuum import Grid2D, GreenSolver, INVK_SCALE, KernelSuite
from .geometry import SuperpositionGraph, build_square_superposition
from .inverse import InverseColumns, invert_direct
from .operators import discrete_green
from .potential import PotentialField, make_potential

__all__ = [
    "green_convergence_table",
    "kinv_asymptotics_suite",
    "height_moment_comparison",
]


def green_convergence_table(
    domain: tuple[float, float, float, float],
    potential_spec: dict,
    mesh_list: list[float],
    probe_pairs: list[tuple[complex, complex]],
    grid_h: float = 1 / 128,
) -> list[dict]:
    """|G_disc(x1,x2) - G_FD(x1,x2)| per probe pair and mesh.

    Probe positions snap to the lattice; the continuum reference is
    evaluated at the snapped positions by bilinear interpolation.
    """
    field = make_potential(potential_spec)
    out = []
    for eps in mesh_list:
        g = build_square_superposition(domain, eps)
        grid = _effective_grid(g, domain, grid_h)
        solver = GreenSolver(grid, field.mass)
        verts = g.base.vertices
        for k, (w, z) in enumerate(probe_pairs):
            i1 = int(np.argmin(np.abs(verts - w)))
            i2 = int(np.argmin(np.abs(verts - z)))
            tab = discrete_green(g, field, [i1])
            disc = float(tab.columns[i2, 0])
            cont = _source_interp_green(grid, solver, verts[i1], verts[i2])
            out.append({"eps": eps, "probe": k, "discrete": disc,
                        "continuum": cont, "err": abs(disc - cont)})
    return out


def _effective_grid(g: SuperpositionGraph, domain, grid_h: float) -> Grid2D:
    """FD grid on the rectangle the lattice actually approximates: its
    Dirichlet ring sits on the rectangle boundary on all four sides (the
    requested domain only bounds it; the overhang would otherwise leave a
    mesh-dependent O(eps) floor in every comparison)."""
    a = g.base.mesh_eps * math.sqrt(2.0)
    x0, y0 = domain[0], domain[1]
    x1 = g.base.vertices.real.max() + a
    y1 = g.base.vertices.imag.max() + a
    # commensurate spacing: h divides the lattice pitch, so lattice
    # vertices land exactly on grid nodes and the Dirichlet walls agree
    h = a / max(1, round(a / grid_h))
    return Grid2D.rectangle(x0, y0, x1, y1, h)


def _source_interp_green(grid: Grid2D, solver: GreenSolver,
                         w: complex, z: complex) -> float:
    """Green value with bilinear interpolation in the source slot."""
    fx = (w.real - grid.x0) / grid.h
    fy = (w.imag - grid.y0) / grid.h
    i0, j0 = int(math.floor(fx)), int(math.floor(fy))
    tx, ty = fx - i0, fy - j0
    acc = 0.0
    for (jj, ii), lam in (((j0, i0), (1 - tx) * (1 - ty)),
                          ((j0, i0 + 1), tx * (1 - ty)),
                          ((j0 + 1, i0), (1 - tx) * ty),
                          ((j0 + 1, i0 + 1), tx * ty)):
        if lam == 0.0:
            continue
        if grid.mask[jj, ii]:
            col = solver.column((jj, ii))
            acc += lam * float(grid.interp(col.astype(complex), z).real)
    return acc


@dataclass
class KinvProbe:
    x1: complex          # primal-row probe position
    y1: complex          # dual-row probe position
    w2: complex          # white target position


def kinv_asymptotics_suite(
    domain: tuple[float, float, float, float],
    potential_spec: dict,
    mesh_list: list[float],
    probes: list[KinvProbe],
    grid_h: float = 1 / 128,
    beta_star: complex | None = None,
) -> dict:
    """Tabulate the normalized error |K^{-1} - asymptotic| / eps per probe
    and mesh, for primal rows (kappa) and dual rows (kappa*), plus the
    fitted constant C in |K^{-1}| <= C eps / |x - w|."""
    field = make_potential(potential_spec)
    x0, y0, x1d, y1d = domain
    if beta_star is None:
        beta_star = complex((x0 + x1d) / 2, y0)

    rows = []
    cfits = []
    sigma = None
    for eps in mesh_list:
        g = build_square_superposition(domain, eps, corner_hint=beta_star)
        grid = _effective_grid(g, domain, grid_h)
        suite = KernelSuite(grid, field, beta_star=beta_star)
        verts = g.base.vertices
        duals = g.base.dual_vertices
        for k, pr in enumerate(probes):
            w2 = int(np.argmin(np.abs(g.white_pos - pr.w2)))
            r = g.base.rhombi[w2]
            xm, _, xp, _ = g.base.rhombus_corners(r)
            dx2 = xp - xm
            sq = math.sqrt(math.tan(r.theta))
            kinv = invert_direct(g, field, [w2])
            i1 = int(np.argmin(np.abs(verts - pr.x1)))
            j1 = int(np.argmin(np.abs(duals - pr.y1)))
            if duals[j1] == duals[g.corner_bstar]:
                raise ValueError("dual probe collides with b*")
            k_primal = kinv.entry(i1, w2)
            k_dual = kinv.entry(g.black_of_dual(j1), w2)

            wpos = g.white_pos[w2]
            kap = INVK_SCALE * suite.kappa_at(verts[i1], wpos)
            # the discrete dual rows vanish at b* (half a lattice step off
            # the boundary); anchoring the conjugate kernel there instead of
            # at beta* removes an O(eps) offset from the comparison
            bpos = duals[g.corner_bstar]
            kst = INVK_SCALE * (suite.kappa_star_at(duals[j1], wpos)
                                - suite.kappa_star_at(bpos, wpos))
            pred_primal = sq * (np.conj(kap) * np.conj(dx2)).real
            pred_dual = 1j * sq * (np.conj(kst) * np.conj(dx2)).real
            if sigma is None:
                sigma = -1 if abs(k_primal - (-pred_primal)) < abs(k_primal - pred_primal) else 1
            errp = abs(k_primal - sigma * pred_primal)
            errd = abs(k_dual - sigma * pred_dual)
            rows.append({
                "eps": eps, "probe": k,
                "primal_err_over_eps": errp / eps,
                "dual_err_over_eps": errd / eps,
                "kinv_primal": complex(k_primal), "kinv_dual": complex(k_dual),
            })
            cfits.append(abs(k_primal) * abs(verts[i1] - wpos) / eps)
    return {"rows": rows, "sigma": sigma, "bound_constants": cfits}


def height_moment_comparison(
    domain: tuple[float, float, float, float],
    potential_spec: dict,
    eps: float,
    face_positions: list[complex],
    grid_h: float = 1 / 128,
    nodes_per_segment: int = 64,
    alt_paths: bool = False,
    richardson: bool = False,
    on_grid: bool = False,
) -> dict:
    """Discrete n-point height moment at mesh eps versus the continuum
    path-integral value on the lattice's effective domain.

    Faces snap to the nearest superposition-graph face; continuum paths
    run vertically from the straight (bottom) boundary to the face
    centers, or, with ``alt_paths``, with an interior rectangular detour
    from the same anchors (path-family independence probe).  With
    ``richardson`` the continuum value is extrapolated from two
    lattice-commensurate grids with spacings a/3 and a/6 (the moment's
    leading grid error is linear in h).
    """
    from .continuum import (PathSpec, bent_path, continuum_height_moment,
                            vertical_path)
    from .inverse import (boundary_face_path, height_moment_determinant,
                          invert_direct)
    from .operators import assemble_kasteleyn

    field = make_potential(potential_spec)
    g = build_square_superposition(domain, eps)
    a = eps * math.sqrt(2.0)
    bstar_col = round(g.base.dual_vertices[g.corner_bstar].real / (a / 2))

    faces = []
    for z in face_positions:
        p = round(z.real / (a / 2))
        q = round(z.imag / (a / 2))
        if abs(p - bstar_col) < 3:
            p += 3
        faces.append((p, q))
    K = assemble_kasteleyn(g, field)
    paths_d = [boundary_face_path(g, fc) for fc in faces]
    whites = sorted({st.white for p in paths_d for st in p.steps})
    kinv = invert_direct(g, field, whites, K)
    disc = height_moment_determinant(g, field, paths_d, kinv, K)

    def continuum_at(h: float) -> tuple[float, float]:
        grid = _effective_grid(g, domain, h)
        # anchor the conjugate kernel at the lattice Temperleyan corner:
        # the discrete dual rows vanish there, half a step off the wall
        suite = KernelSuite(grid, field,
                            beta_star=g.base.dual_vertices[g.corner_bstar])
        cpaths = []
        for k, (p, q) in enumerate(faces):
            zc = complex((p + 0.5) * a / 2, (q + 0.5) * a / 2)
            xcol = round(zc.real / grid.h) * grid.h
            if alt_paths:
                # same anchor, interior rectangular detour (grid-aligned)
                d = 0.06 if k % 2 == 0 else -0.06
                d = round(d / grid.h) * grid.h
                ymid = round(0.5 * zc.imag / grid.h) * grid.h
                cpaths.append(PathSpec(segments=[
                    (complex(xcol, domain[1]), complex(xcol, ymid)),
                    (complex(xcol, ymid), complex(xcol + d, ymid)),
                    (complex(xcol + d, ymid), complex(xcol + d, zc.imag)),
                    (complex(xcol + d, zc.imag), complex(xcol, zc.imag)),
                ]))
            else:
                cpaths.append(vertical_path(xcol, domain[1], zc.imag))
        return continuum_height_moment(suite, cpaths, nodes_per_segment,
                                       on_grid=on_grid)

    if richardson:
        c1, im1 = continuum_at(a / 3)
        c2, im2 = continuum_at(a / 6)
        cont, imag = 2 * c2 - c1, max(im1, im2)
    else:
        cont, imag = continuum_at(grid_h)
    return {"discrete": disc, "continuum": cont, "imag": imag,
            "rel_dev": abs(disc - cont) / abs(cont)}
