"""Discrete derivative operators on the superposition graph.

Black functions live on primal + dual vertices, white functions on
rhombus centers.  The derivative of a black function H at a white w with
corners x-, y-, x+, y+ is

    dH(w)    = [ (H(x+)-H(x-))/(x+-x-) + (H(y+)-H(y-))/(y+-y-) ] / 2
    dbarH(w) =   same with conjugated denominators,

equivalently (1/4 mu_W) sum_b conj(mu_wb) H(b) with the edge weights
mu_wx = 2 tan(theta)(x - w), mu_wy = 2 cot(theta)(y - w).  Functions
given only on the primal class use the zero-on-dual extension.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import SuperpositionGraph
from .potential import PotentialField, discrete_mass

__all__ = [
    "proj",
    "mu_white",
    "mu_black",
    "dbar_black",
    "d_black",
    "dbar_white",
    "d_white",
    "average_white",
    "cauchy_kernel",
    "cauchy_formula_residual",
    "discrete_gradient_check",
]


def proj(z: complex, zeta: complex) -> complex:
    """Orthogonal projection of z onto the real line spanned by zeta."""
    u = zeta / abs(zeta)
    return (z * u.conjugate()).real * u


def mu_white(graph: SuperpositionGraph) -> np.ndarray:
    """Rhombus areas eps^2 sin(2 theta) per white vertex."""
    eps = graph.base.mesh_eps
    return np.array([eps * eps * math.sin(2 * r.theta) for r in graph.base.rhombi])


def _corner_data(graph: SuperpositionGraph, w: int):
    """(positions, black ids with -1 for absent, mu weights) in the order
    x-, y-, x+, y+."""
    iso = graph.base
    r = iso.rhombi[w]
    xm, ym, xp, yp = iso.rhombus_corners(r)
    t = math.tan(r.theta)
    ids = [
        r.x_minus,
        graph.black_of_dual(r.y_minus),
        r.x_plus,
        graph.black_of_dual(r.y_plus),
    ]
    mus = [
        2 * t * (xm - r.center),
        2 / t * (ym - r.center),
        2 * t * (xp - r.center),
        2 / t * (yp - r.center),
    ]
    return (xm, ym, xp, yp), ids, mus


def _d_matrix(graph: SuperpositionGraph, conjugate: bool) -> sp.csr_matrix:
    """White x black matrix of d (or dbar) acting on black functions.

    Rows exist for every white; absent corners (outside Gamma, or b*)
    contribute nothing, matching the zero-extension convention.
    """
    muW = mu_white(graph)
    rows, cols, vals = [], [], []
    for w in range(graph.n_white()):
        _, ids, mus = _corner_data(graph, w)
        for b, mu in zip(ids, mus):
            if b < 0:
                continue
            coef = (mu if conjugate else mu.conjugate()) / (4 * muW[w])
            rows.append(w)
            cols.append(b)
            vals.append(coef)
    return sp.csr_matrix(
        (np.array(vals, dtype=complex), (rows, cols)),
        shape=(graph.n_white(), graph.n_black()),
    )


def d_black(graph: SuperpositionGraph, H: np.ndarray) -> np.ndarray:
    """[dH](w) for a black function H (length n_black)."""
    return _d_matrix(graph, conjugate=False) @ H


def dbar_black(graph: SuperpositionGraph, H: np.ndarray) -> np.ndarray:
    return _d_matrix(graph, conjugate=True) @ H


def extend_primal(graph: SuperpositionGraph, h: np.ndarray) -> np.ndarray:
    """Zero-on-dual extension of a function on the primal class."""
    out = np.zeros(graph.n_black(), dtype=np.result_type(h.dtype, float))
    out[: graph.n_primal] = h
    return out


def mu_black(graph: SuperpositionGraph) -> np.ndarray:
    """mu_B(b) = (1/4) sum of incident rhombus areas, per black vertex."""
    muW = mu_white(graph)
    out = np.zeros(graph.n_black())
    for w, inc in enumerate(graph.incidence):
        for b, _ in inc:
            out[b] += muW[w] / 4
    return out


def _dual_matrix(graph: SuperpositionGraph, conjugate: bool) -> sp.csr_matrix:
    """Black x white matrix of d (or dbar) acting on white functions:
    [dbar F](b) = -(1/4 mu_B) sum_w mu_wb F(w)."""
    muW = mu_white(graph)
    muB = mu_black(graph)
    rows, cols, vals = [], [], []
    for w in range(graph.n_white()):
        _, ids, mus = _corner_data(graph, w)
        for b, mu in zip(ids, mus):
            if b < 0:
                continue
            coef = -(mu if conjugate else mu.conjugate()) / (4 * muB[b])
            rows.append(b)
            cols.append(w)
            vals.append(coef)
    return sp.csr_matrix(
        (np.array(vals, dtype=complex), (rows, cols)),
        shape=(graph.n_black(), graph.n_white()),
    )


def dbar_white(graph: SuperpositionGraph, F: np.ndarray) -> np.ndarray:
    return _dual_matrix(graph, conjugate=True) @ F


def d_white(graph: SuperpositionGraph, F: np.ndarray) -> np.ndarray:
    return _dual_matrix(graph, conjugate=False) @ F


def average_white(graph: SuperpositionGraph, F: np.ndarray) -> np.ndarray:
    """[A F](b) = (1/4 mu_B(b)) sum_{w ~ b} mu_W(w) F(w)."""
    muW = mu_white(graph)
    muB = mu_black(graph)
    out = np.zeros(graph.n_black(), dtype=complex)
    for w, inc in enumerate(graph.incidence):
        for b, _ in inc:
            out[b] += muW[w] * F[w]
    return out / (4 * muB)


def interior_whites(graph: SuperpositionGraph) -> np.ndarray:
    """Whites whose four corners all survive (full derivative stencil)."""
    return np.array(
        [w for w, inc in enumerate(graph.incidence) if len(inc) == 4], dtype=int
    )


# ---------------------------------------------------------------------------
# discrete Cauchy kernel on a padded box
# ---------------------------------------------------------------------------


def cauchy_kernel(
    graph: SuperpositionGraph,
    w2: int,
) -> tuple[np.ndarray, float]:
    """Solve [dbar k](w) = delta_{w, w2} / mu_W(w2) for a black function k
    with zero values outside the graph (Dirichlet truncation of the
    decaying full-plane kernel).

    The graph itself serves as the padded box: callers build a patch
    centered on the point of interest; the truncation error at distance d
    from w2 scales like d / (box radius).  The dbar matrix is square (the
    superposition graph is balanced) and row-proportional to the critical
    Kasteleyn matrix, hence invertible.  Returns (k, solve residual).
    """
    muW = mu_white(graph)
    D = _d_matrix(graph, conjugate=True).tocsc()
    rhs = np.zeros(graph.n_white(), dtype=complex)
    rhs[w2] = 1.0 / muW[w2]
    lu = spla.splu(D)
    k = lu.solve(rhs)
    resid = float(np.abs(D @ k - rhs).max())
    return k, resid


def _square_contours(graph: SuperpositionGraph, i0: int, i1: int, j0: int, j1: int):
    """Counterclockwise contour data for a rectangular primal block
    [i0..i1] x [j0..j1] of a square-lattice graph (1-based grid coords).

    Returns (outer, inner, interior) where
      outer  = list of (white, inner_dual_black, primal_step) built on the
               boundary primal cycle x_0 w_0 x_1 w_1 ...,
      inner  = list of (white, outer_primal, dual_step) on the dual cycle,
      interior = primal indices strictly inside.
    """
    iso = graph.base
    a = iso.mesh_eps * math.sqrt(2.0)
    origin = iso.vertices[0] - complex(a, a)  # primal (1,1) at origin + (a, a)

    pos_to_primal = {}
    for ix, z in enumerate(iso.vertices):
        q = z - origin
        pos_to_primal[(round(q.real / a), round(q.imag / a))] = ix
    pos_to_white = {}
    for wix, z in enumerate(graph.white_pos):
        q = (z - origin) * 2 / a
        pos_to_white[(round(q.real), round(q.imag))] = wix
    pos_to_dual = {}
    for dix, z in enumerate(iso.dual_vertices):
        q = (z - origin) * 2 / a
        pos_to_dual[(round(q.real), round(q.imag))] = dix

    def primal(i, j):
        return pos_to_primal[(i, j)]

    def white(i2, j2):
        return pos_to_white[(i2, j2)]

    def dual(i2, j2):
        return pos_to_dual[(i2, j2)]

    # boundary primal cycle, CCW from (i0, j0)
    cycle = []
    for i in range(i0, i1):
        cycle.append((i, j0))
    for j in range(j0, j1):
        cycle.append((i1, j))
    for i in range(i1, i0, -1):
        cycle.append((i, j1))
    for j in range(j1, j0, -1):
        cycle.append((i0, j))
    outer = []
    n = len(cycle)
    for k in range(n):
        (ia, ja), (ib, jb) = cycle[k], cycle[(k + 1) % n]
        wmid = white(ia + ib, ja + jb)
        step = complex((ib - ia) * a, (jb - ja) * a)
        # inner dual of this rhombus: rotate the step by +90 degrees
        inward = 1j * step / 2
        mid = complex((ia + ib) * a / 2, (ja + jb) * a / 2)
        dpos = mid + inward
        din = dual(round(2 * dpos.real / a), round(2 * dpos.imag / a))
        outer.append((wmid, graph.black_of_dual(din), step))

    # inner dual cycle, CCW: duals strictly inside the primal cycle
    dcycle = []
    for i in range(i0, i1 - 1):
        dcycle.append((i, j0))
    for j in range(j0, j1 - 1):
        dcycle.append((i1 - 1, j))
    for i in range(i1 - 1, i0, -1):
        dcycle.append((i, j1 - 1))
    for j in range(j1 - 1, j0, -1):
        dcycle.append((i0, j))
    # dual (i, j) sits at ((i + 1/2) a, (j + 1/2) a): doubled coords (2i+1, 2j+1)
    inner = []
    m = len(dcycle)
    for k in range(m):
        (ia, ja), (ib, jb) = dcycle[k], dcycle[(k + 1) % m]
        wmid = white(ia + ib + 1, ja + jb + 1)
        step = complex((ib - ia) * a, (jb - ja) * a)
        # the primal corner of this rhombus on the outer cycle: rotate -90
        outward = -1j * step / 2
        mid = complex((ia + ib + 1) * a / 2, (ja + jb + 1) * a / 2)
        ppos = mid + outward
        pout = primal(round(ppos.real / a), round(ppos.imag / a))
        inner.append((wmid, pout, step))

    interior = [
        primal(i, j) for j in range(j0 + 1, j1) for i in range(i0 + 1, i1)
    ]
    return outer, inner, interior


def cauchy_formula_residual(
    graph: SuperpositionGraph,
    field: PotentialField,
    H: np.ndarray,
    block: tuple[int, int, int, int],
    w_star: int,
    kernel_graph: SuperpositionGraph | None = None,
) -> complex:
    """Residual of the massive discrete Cauchy formula on a rectangular
    block of a square-lattice graph.

    H is a massive harmonic primal function on the block interior; the
    formula reconstructs F = dH at the white w_star from two contour sums
    plus the mass bulk term, with the Cauchy kernel computed on the graph
    itself (callers pass a well-padded graph).
    """
    iso = graph.base
    F = d_black(graph, extend_primal(graph, H))
    m = discrete_mass(graph, field)

    kg = kernel_graph if kernel_graph is not None else graph
    k_black, _ = cauchy_kernel(kg, _match_white(kg, graph.white_pos[w_star]))

    def kval(z: complex) -> complex:
        return k_black[_match_black(kg, z)]

    outer, inner, interior = _square_contours(graph, *block)
    s_outer = sum(
        F[w] * kval(graph.black_pos[yb]) * step for w, yb, step in outer
    )
    s_inner = sum(
        F[w] * kval(iso.vertices[xb]) * step for w, xb, step in inner
    )
    bulk = sum(
        kval(iso.vertices[x]) * m[x] * H[x] for x in interior
    )
    rhs = (s_outer + s_inner) / 4j - bulk / 2
    return F[w_star] - rhs


def _match_white(graph: SuperpositionGraph, pos: complex) -> int:
    return int(np.argmin(np.abs(graph.white_pos - pos)))


def _match_black(graph: SuperpositionGraph, pos: complex) -> int:
    return int(np.argmin(np.abs(graph.black_pos - pos)))


def discrete_gradient_check(
    graph: SuperpositionGraph,
    H: np.ndarray,
    probes: list[tuple[int, int]],
) -> float:
    """Max over probe pairs (primal x0, adjacent white w0) of
    |F(w0) - Proj[2 AF(x0); conj(w0 - x0)]| with F = dH."""
    F = d_black(graph, extend_primal(graph, H))
    AF = average_white(graph, F)
    iso = graph.base
    worst = 0.0
    for x0, w0 in probes:
        zeta = (graph.white_pos[w0] - iso.vertices[x0]).conjugate()
        dev = abs(F[w0] - proj(2 * AF[x0], zeta))
        worst = max(worst, dev)
    return worst
