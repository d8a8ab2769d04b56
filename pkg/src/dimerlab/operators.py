"""Discrete Laplacians, the Kasteleyn matrix, and discrete Green functions.

Sign conventions, fixed once for the whole package:

* The discrete Laplacian Delta f(x) = sum tan(theta) (f(x') - f(x)) is a
  negative operator.
* The massive Dirichlet Green table is G = (Delta_d - m I)^{-1}, which is
  negative definite; probabilistic oracles (killed-walk hitting
  probabilities) therefore match -G and every GreenTable records the
  convention in its ``convention`` tag.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import SuperpositionGraph
from .potential import EdgeWeights, PotentialField, discrete_mass, edge_weights

__all__ = [
    "SparseOperator",
    "GreenTable",
    "assemble_laplacian",
    "assemble_kasteleyn",
    "verify_block_diagonal",
    "discrete_green",
    "resolvent_check",
    "free_green_approx",
    "green_formula_residual",
    "hitting_probability_mc",
]

EULER_GAMMA = 0.5772156649015328606


@dataclass
class SparseOperator:
    """Sparse matrix together with row/column vertex naming."""

    matrix: sp.csr_matrix
    row_kind: str          # "white" | "primal" | "black"
    col_kind: str
    symmetry: str = "none"  # "symmetric" | "hermitian" | "none"

    def check_symmetry(self, tol: float = 1e-12) -> bool:
        if self.symmetry == "none":
            return True
        d = self.matrix - (
            self.matrix.T if self.symmetry == "symmetric" else self.matrix.conj().T
        )
        return bool(abs(d).max() <= tol) if d.nnz else True


@dataclass
class GreenTable:
    """Columns of a Green function (or inverse Kasteleyn) keyed by source."""

    sources: list[int]
    columns: np.ndarray     # shape (n_vertices, n_sources)
    convention: str         # e.g. "negative_definite"

    def column(self, source: int) -> np.ndarray:
        return self.columns[:, self.sources.index(source)]


def assemble_laplacian(
    graph: SuperpositionGraph,
    field: PotentialField | None = None,
    dirichlet: bool = True,
) -> SparseOperator:
    """Critical-weight Laplacian on the primal graph.

    The Dirichlet variant zero-extends functions outside Gamma: primal
    vertices keep their full infinite-lattice degree on the diagonal while
    off-diagonal entries exist only inside Gamma.  The square-lattice
    builder guarantees every vertex has its four neighbours in the
    infinite lattice; file-loaded graphs use the rhombi actually listed.
    """
    iso = graph.base
    n = iso.n_primal()
    rows, cols, vals = [], [], []
    deg = np.zeros(n)
    for i, j, theta in iso.edges:
        t = math.tan(theta)
        rows += [i, j]
        cols += [j, i]
        vals += [t, t]
        deg[i] += t
        deg[j] += t
    if dirichlet:
        # boundary-touching vertices also pay conductance to the outside
        deg += _outer_degree(graph)
    rows += list(range(n))
    cols += list(range(n))
    vals += list(-deg)
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return SparseOperator(matrix=mat, row_kind="primal", col_kind="primal",
                          symmetry="symmetric")


def _outer_degree(graph: SuperpositionGraph) -> np.ndarray:
    """Conductance from each primal vertex to the missing outside neighbours."""
    iso = graph.base
    out = np.zeros(iso.n_primal())
    for i, theta, _ in iso.boundary_stubs:
        out[i] += math.tan(theta)
    return out


def assemble_kasteleyn(graph: SuperpositionGraph, field: PotentialField) -> SparseOperator:
    """Kasteleyn matrix K on white x black with gauge weights and phases."""
    ew = edge_weights(graph, field)
    rows, cols, vals = [], [], []
    for w, inc in enumerate(graph.incidence):
        for b, role in inc:
            rows.append(w)
            cols.append(b)
            vals.append(ew.weight[w][role] * ew.phase[w][role])
    mat = sp.csr_matrix(
        (np.array(vals, dtype=complex), (rows, cols)),
        shape=(graph.n_white(), graph.n_black()),
    )
    return SparseOperator(matrix=mat, row_kind="white", col_kind="black")


def verify_block_diagonal(
    graph: SuperpositionGraph,
    field: PotentialField,
    K: SparseOperator | None = None,
) -> dict:
    """Check K*K = [[-Delta_d + m I, 0], [0, *]] on the primal block.

    Returns the max absolute off-block entry and the max absolute
    deviation of the primal block from -Delta_d + m I (relative to the
    largest entry of that block).
    """
    if K is None:
        K = assemble_kasteleyn(graph, field)
    KtK = (K.matrix.conj().T @ K.matrix).tocsr()
    n0 = graph.n_primal
    off = KtK[:n0, n0:]
    off_max = float(abs(off).max()) if off.nnz else 0.0

    lap = assemble_laplacian(graph, field, dirichlet=True).matrix
    m = discrete_mass(graph, field)
    target = (-lap + sp.diags(m)).tocsr()
    blk = KtK[:n0, :n0]
    scale = float(abs(target).max())
    dev = abs(blk - target)
    dev_max = float(dev.max()) / scale if dev.nnz else 0.0
    dual_block = KtK[n0:, n0:]
    return {
        "off_block_max": off_max,
        "primal_block_rel_dev": dev_max,
        "primal_block_scale": scale,
        "dual_block": dual_block,
    }


def discrete_green(
    graph: SuperpositionGraph,
    field: PotentialField,
    sources: list[int],
    massive: bool = True,
) -> GreenTable:
    """Columns of (Delta_d - m I)^{-1} (negative definite) at the sources."""
    lap = assemble_laplacian(graph, field, dirichlet=True).matrix
    if massive:
        m = discrete_mass(graph, field)
        if m.min() < -1e-12:
            raise ValueError(
                f"discrete mass attains {m.min():.3g} < 0; Green table needs m >= 0"
            )
        op = lap - sp.diags(np.maximum(m, 0.0))
    else:
        op = lap
    lu = spla.splu(op.tocsc())
    n = graph.n_primal
    cols = np.zeros((n, len(sources)))
    for k, s in enumerate(sources):
        e = np.zeros(n)
        e[s] = 1.0
        cols[:, k] = lu.solve(e)
    return GreenTable(sources=list(sources), columns=cols,
                      convention="negative_definite")


def resolvent_check(
    graph: SuperpositionGraph,
    field: PotentialField,
    sources: list[int],
) -> float:
    """Max residual of G_m(x1,x2) - G_0(x1,x2) - sum_x m(x) G_m(x1,x) G_0(x,x2)
    over source pairs, with full columns computed for the inner sum."""
    n = graph.n_primal
    m = discrete_mass(graph, field)
    gm_full = discrete_green(graph, field, sources, massive=True)
    g0_full = discrete_green(graph, field, sources, massive=False)
    # inner sum needs G_m(x1, .) over all x: solve those columns densely
    lap = assemble_laplacian(graph, field, dirichlet=True).matrix
    lu_m = spla.splu((lap - sp.diags(np.maximum(m, 0.0))).tocsc())
    lu_0 = spla.splu(lap.tocsc())
    res = 0.0
    for a, sa in enumerate(sources):
        ea = np.zeros(n)
        ea[sa] = 1.0
        gm_col = lu_m.solve(ea)      # G_m(sa, .)
        for b, sb in enumerate(sources):
            eb = np.zeros(n)
            eb[sb] = 1.0
            g0_col = lu_0.solve(eb)  # G_0(., sb)
            corr = float(np.dot(m * gm_col, g0_col))
            lhs = gm_full.columns[sb, a]
            rhs = g0_full.columns[sb, a] + corr
            res = max(res, abs(lhs - rhs))
    return res


def free_green_approx(
    mesh_eps: float,
    x1: complex,
    x2: complex,
    pad_factor: float = 16.0,
) -> tuple[float, float]:
    """Full-plane square-lattice Green value G(x1,x2) with the diagonal
    normalized to (log(eps) - gamma_Euler - log 2) / (2 pi).

    Uses a Dirichlet box padded to pad_factor * |x1 - x2| around the pair;
    the reported error estimate scales like 1/pad_factor.
    """
    if pad_factor < 4:
        raise ValueError("pad_factor must be >= 4")
    from .geometry import build_square_superposition

    a = mesh_eps * math.sqrt(2.0)
    d = max(abs(x1 - x2), a)
    half = pad_factor * d
    mid = (x1 + x2) / 2
    dom = (mid.real - half, mid.imag - half, mid.real + half, mid.imag + half)
    g = build_square_superposition(dom, mesh_eps)
    iso = g.base
    i1 = int(np.argmin(np.abs(iso.vertices - x1)))
    i2 = int(np.argmin(np.abs(iso.vertices - x2)))
    from .potential import make_potential

    table = discrete_green(g, make_potential({"kind": "zero"}), [i1], massive=False)
    col = table.columns[:, 0]
    norm = (math.log(mesh_eps) - EULER_GAMMA - math.log(2.0)) / (2 * math.pi)
    value = col[i2] - col[i1] + norm
    err = abs(1.0 / (2 * math.pi) * math.log(max(d, a) / half))  # crude 1/pad scale
    return float(value), float(err / pad_factor + 1e-12)


def green_formula_residual(
    graph: SuperpositionGraph,
    subset: np.ndarray,
    F: np.ndarray,
    G: np.ndarray,
) -> float:
    """Discrete Green formula on a vertex subset:
    sum_{x in S} [G Delta F - F Delta G](x) equals the edge-boundary
    bilinear sum; returns the absolute difference (exact in theory)."""
    iso = graph.base
    inside = np.zeros(iso.n_primal(), dtype=bool)
    inside[subset] = True
    lhs = 0.0
    rhs = 0.0
    lapF = np.zeros(iso.n_primal())
    lapG = np.zeros(iso.n_primal())
    for i, j, theta in iso.edges:
        t = math.tan(theta)
        lapF[i] += t * (F[j] - F[i])
        lapF[j] += t * (F[i] - F[j])
        lapG[i] += t * (G[j] - G[i])
        lapG[j] += t * (G[i] - G[j])
    lhs = float(np.sum(G[subset] * lapF[subset] - F[subset] * lapG[subset]))
    for i, j, theta in iso.edges:
        t = math.tan(theta)
        if inside[i] and not inside[j]:
            rhs += t * (G[i] * F[j] - G[j] * F[i])
        elif inside[j] and not inside[i]:
            rhs += t * (G[j] * F[i] - G[i] * F[j])
    return abs(lhs - rhs)


def hitting_probability_mc(
    graph: SuperpositionGraph,
    field: PotentialField,
    target: int,
    start: int,
    n_walks: int,
    seed: int = 0,
) -> tuple[float, float]:
    """Killed-random-walk estimate of P_start[X hits target before dying
    or leaving Gamma], with its standard error.

    The walk at x moves to neighbour x' with rate tan(theta), dies with
    rate m(x); absorption happens at the target or outside Gamma.
    """
    iso = graph.base
    n = iso.n_primal()
    m = np.maximum(discrete_mass(graph, field), 0.0)
    nbrs: list[list[int]] = [[] for _ in range(n)]
    cond: list[list[float]] = [[] for _ in range(n)]
    for i, j, theta in iso.edges:
        t = math.tan(theta)
        nbrs[i].append(j)
        cond[i].append(t)
        nbrs[j].append(i)
        cond[j].append(t)
    outer = _outer_degree(graph)
    # transition tables: prob of each neighbour, of dying, of exiting
    tables = []
    for x in range(n):
        tot = sum(cond[x]) + outer[x] + m[x]
        tables.append((np.array(nbrs[x], dtype=int),
                       np.cumsum(np.array(cond[x]) / tot),
                       (sum(cond[x])) / tot))
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(n_walks):
        x = start
        while True:
            if x == target:
                hits += 1
                break
            moves, cum, p_move = tables[x]
            u = rng.random()
            if u >= p_move:
                break  # died or exited Gamma
            x = int(moves[np.searchsorted(cum, u)])
    p = hits / n_walks
    se = math.sqrt(max(p * (1 - p), 1e-12) / n_walks)
    return p, se


def mass_rate(graph: SuperpositionGraph, field: PotentialField) -> np.ndarray:
    """pi_m(x) = m(x) + sum of incident conductances (infinite-lattice degree)."""
    iso = graph.base
    n = iso.n_primal()
    deg = np.zeros(n)
    for i, j, theta in iso.edges:
        t = math.tan(theta)
        deg[i] += t
        deg[j] += t
    deg += _outer_degree(graph)
    return np.maximum(discrete_mass(graph, field), 0.0) + deg
