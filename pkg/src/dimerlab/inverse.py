"""Inverse Kasteleyn columns, dimer correlations, and height moments.

The Kasteleyn matrix rows are whites, columns are blacks; a "column" of
K^{-1} for a white target w2 is the vector over blacks solving
K col = e_{w2}, i.e. col[b] = K^{-1}(b, w2).

Heights live on the faces of the superposition graph.  For square-lattice
graphs those faces form the half-step grid: in doubled coordinates
(a/2 units anchored at the straight boundary) black/white vertices sit at
integer points and faces at half-integer cells.  The height is anchored
at the outer face (value 0) and increments across an edge (w, b) by
(-1)^xi (1_e - P(e)) where xi = 0 when w lies left of the crossing
direction; the reference flow P(e) makes every face mean-zero.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .geometry import SuperpositionGraph
from .potential import PotentialField, edge_weights
from .operators import GreenTable, SparseOperator, assemble_kasteleyn, discrete_green

__all__ = [
    "InverseColumns",
    "invert_direct",
    "invert_via_green",
    "massive_cr_residual",
    "telescope_dual",
    "edge_correlation",
    "enumerate_dimers",
    "DimerEnsemble",
    "FacePath",
    "boundary_face_path",
    "height_moment_determinant",
    "height_moment_enumeration",
]


@dataclass
class InverseColumns:
    """Columns of K^{-1} keyed by white target."""

    targets: list[int]
    columns: np.ndarray    # (n_black, n_targets) complex
    method: str
    residual: float

    def column(self, w: int) -> np.ndarray:
        return self.columns[:, self.targets.index(w)]

    def entry(self, b: int, w: int) -> complex:
        return self.columns[b, self.targets.index(w)]


def invert_direct(
    graph: SuperpositionGraph,
    field: PotentialField,
    targets: list[int],
    K: SparseOperator | None = None,
) -> InverseColumns:
    if K is None:
        K = assemble_kasteleyn(graph, field)
    mat = K.matrix.tocsc()
    if mat.shape[0] != mat.shape[1]:
        raise ValueError(f"Kasteleyn matrix not square: {mat.shape}")
    lu = spla.splu(mat)
    cols = np.zeros((graph.n_black(), len(targets)), dtype=complex)
    resid = 0.0
    for k, w in enumerate(targets):
        e = np.zeros(graph.n_white(), dtype=complex)
        e[w] = 1.0
        cols[:, k] = lu.solve(e)
        resid = max(resid, float(np.abs(mat @ cols[:, k] - e).max()))
    return InverseColumns(targets=list(targets), columns=cols,
                          method="direct_solve", residual=resid)


def invert_via_green(
    graph: SuperpositionGraph,
    field: PotentialField,
    targets: list[int],
    green: GreenTable | None = None,
    reference: InverseColumns | None = None,
) -> tuple[InverseColumns, int, float]:
    """Primal rows of K^{-1} through the Green function:
    K^{-1}(x1, w2) = sigma * (G K*)(x1, w2), sigma calibrated once against
    the direct solve (sigma = -1 for the negative-definite G convention).

    Returns (columns with dual rows zeroed, sigma, max deviation)."""
    K = assemble_kasteleyn(graph, field)
    if reference is None:
        reference = invert_direct(graph, field, targets, K)
    iso = graph.base
    sources_needed = sorted(
        {xi for w in targets for xi in (iso.rhombi[w].x_minus, iso.rhombi[w].x_plus) if xi >= 0}
    )
    if green is None:
        green = discrete_green(graph, field, sources_needed)
    npn = graph.n_primal
    raw = np.zeros((graph.n_black(), len(targets)), dtype=complex)
    for k, w in enumerate(targets):
        r = iso.rhombi[w]
        acc = np.zeros(npn, dtype=complex)
        for xi in (r.x_minus, r.x_plus):
            if xi >= 0:
                acc += green.column(xi) * np.conj(K.matrix[w, xi])
        raw[:npn, k] = acc
    dev = {}
    for sigma in (1, -1):
        dev[sigma] = float(np.abs(sigma * raw[:npn] - reference.columns[:npn]).max())
    sigma = 1 if dev[1] <= dev[-1] else -1
    if min(dev.values()) > 1e-6 and abs(dev[1] - dev[-1]) < 1e-12:
        raise ValueError("sign calibration ambiguous: both signs deviate > 1e-6")
    return (
        InverseColumns(targets=list(targets), columns=sigma * raw,
                       method="green_formula", residual=dev[sigma]),
        sigma,
        dev[sigma],
    )


def _v(field: PotentialField, z: complex) -> float:
    return field.value(z)


def massive_cr_residual(
    graph: SuperpositionGraph,
    field: PotentialField,
    kinv: InverseColumns,
    w1: int,
    w2: int,
) -> complex:
    """-dx K^{-1} - i dy K^{-1} at the rhombus of w1, for the column w2.

    Exact zero (given K K^{-1} = I) since it is the w1-row of K applied
    to the column, rewritten through the exponential gauge; entries at
    removed corners (outside Gamma, or b*) count as zero."""
    iso = graph.base
    r = iso.rhombi[w1]
    xm, ym, xp, yp = iso.rhombus_corners(r)
    t = math.sqrt(math.tan(r.theta))
    col = kinv.column(w2)

    def at(black_id: int) -> complex:
        return col[black_id] if black_id >= 0 else 0.0

    kxm = at(r.x_minus)
    kxp = at(r.x_plus)
    kym = at(graph.black_of_dual(r.y_minus))
    kyp = at(graph.black_of_dual(r.y_plus))
    vxm, vxp = _v(field, xm), _v(field, xp)
    vym, vyp = _v(field, ym), _v(field, yp)
    dx = t * (math.exp((vxm - vxp) / 2) * kxp - math.exp((vxp - vxm) / 2) * kxm)
    s = (vxp + vxm) / 2
    dy = (math.exp(vyp - s) * kyp - math.exp(vym - s) * kym) / t
    return -dx - 1j * dy


def dual_path(
    graph: SuperpositionGraph,
    y_target: int,
    avoid_white: int | set[int] | None = None,
) -> list[int]:
    """Chain of whites whose dual diagonals connect b* to the dual vertex
    ``y_target`` (BFS in the dual adjacency, avoiding the given whites)."""
    iso = graph.base
    nd = iso.n_dual()
    if avoid_white is None:
        avoided: set[int] = set()
    elif isinstance(avoid_white, int):
        avoided = {avoid_white}
    else:
        avoided = set(avoid_white)
    adj: list[list[tuple[int, int]]] = [[] for _ in range(nd)]
    for w, r in enumerate(iso.rhombi):
        if w in avoided:
            continue
        adj[r.y_minus].append((r.y_plus, w))
        adj[r.y_plus].append((r.y_minus, w))
    start = graph.corner_bstar
    prev = {start: (None, None)}
    queue = [start]
    while queue:
        nxt = []
        for y in queue:
            for y2, w in adj[y]:
                if y2 not in prev:
                    prev[y2] = (y, w)
                    nxt.append(y2)
        queue = nxt
    if y_target not in prev:
        raise ValueError("no dual path from b* avoiding the requested white")
    whites = []
    y = y_target
    while prev[y][0] is not None:
        y0, w = prev[y]
        whites.append(w)
        y = y0
    return whites[::-1]


def telescope_dual(
    graph: SuperpositionGraph,
    field: PotentialField,
    kinv: InverseColumns,
    path_whites: list[int],
    w2: int,
) -> complex:
    """Reconstruct K^{-1}(y1, w2) by telescoping the exponentially gauged
    dy differences along a dual chain starting at b*.

    Each step contributes exp(V(y_from))/q_k * [dy K^{-1}](w_k, w2) where
    q_k folds the gauge so the sum telescopes exactly to
    exp(V(y1)) K^{-1}(y1, w2) (the b* term vanishes by convention)."""
    iso = graph.base
    col = kinv.column(w2)
    y_from = graph.corner_bstar
    total = 0.0 + 0j
    for w in path_whites:
        if w == w2:
            raise ValueError("path crosses the target white's rhombus")
        r = iso.rhombi[w]
        if y_from == r.y_minus:
            orient = 1.0
            y_to = r.y_plus
        elif y_from == r.y_plus:
            orient = -1.0
            y_to = r.y_minus
        else:
            raise ValueError("path whites do not chain dual diagonals")
        xm, ym, xp, yp = iso.rhombus_corners(r)
        t = math.sqrt(math.tan(r.theta))
        s = (_v(field, xp) + _v(field, xm)) / 2
        vym, vyp = _v(field, ym), _v(field, yp)

        def at(black_id: int) -> complex:
            return col[black_id] if black_id >= 0 else 0.0

        dy = (math.exp(vyp - s) * at(graph.black_of_dual(r.y_plus))
              - math.exp(vym - s) * at(graph.black_of_dual(r.y_minus))) / t
        v_from = vym if orient > 0 else vyp
        q = orient * math.exp(v_from - s) / t
        total += math.exp(v_from) / q * dy
        y_from = y_to
    v_end = _v(field, iso.dual_vertices[y_from])
    return math.exp(-v_end) * total


# ---------------------------------------------------------------------------
# exact enumeration oracle
# ---------------------------------------------------------------------------


@dataclass
class DimerEnsemble:
    """All perfect matchings of the superposition graph with gauge weights."""

    graph: SuperpositionGraph
    matchings: list[tuple[int, ...]]   # per white, the matched black id
    weights: np.ndarray
    Z: float

    def edge_probability(self, w: int, b: int) -> float:
        sel = [k for k, m in enumerate(self.matchings) if m[w] == b]
        return float(self.weights[sel].sum() / self.Z)

    def joint_centered(self, edges: list[tuple[int, int]]) -> float:
        ps = [self.edge_probability(w, b) for w, b in edges]
        acc = 0.0
        for k, m in enumerate(self.matchings):
            term = 1.0
            for (w, b), p in zip(edges, ps):
                term *= (1.0 if m[w] == b else 0.0) - p
            acc += term * self.weights[k]
        return float(acc / self.Z)


def enumerate_dimers(graph: SuperpositionGraph, field: PotentialField) -> DimerEnsemble:
    """Exhaustive weighted matching enumeration (<= 24 whites)."""
    if graph.n_white() > 24:
        raise ValueError(f"{graph.n_white()} whites exceed the enumeration cap (24)")
    ew = edge_weights(graph, field)
    neighbors: list[list[tuple[int, float]]] = []
    for w, inc in enumerate(graph.incidence):
        neighbors.append([(b, ew.weight[w][role]) for b, role in inc])
    order = sorted(range(graph.n_white()), key=lambda w: len(neighbors[w]))
    matchings: list[tuple[int, ...]] = []
    weights: list[float] = []
    n = graph.n_white()
    assign = [-1] * n
    used: set[int] = set()

    def rec(k: int, wgt: float) -> None:
        if k == n:
            matchings.append(tuple(assign))
            weights.append(wgt)
            return
        w = order[k]
        for b, c in neighbors[w]:
            if b not in used:
                used.add(b)
                assign[w] = b
                rec(k + 1, wgt * c)
                used.discard(b)
        assign[w] = -1

    rec(0, 1.0)
    wts = np.array(weights)
    if len(matchings) == 0 or wts.sum() <= 0:
        raise ValueError("no perfect matchings (Z = 0)")
    return DimerEnsemble(graph=graph, matchings=matchings, weights=wts, Z=float(wts.sum()))


# ---------------------------------------------------------------------------
# edge correlations through K^{-1}
# ---------------------------------------------------------------------------


def psi_gauge(graph: SuperpositionGraph, w: int) -> complex:
    """psi(w) = 2 sqrt(cos sin) (x+ - w)/|x+ - w| (x+ = the corner where
    the Kasteleyn entry is positive real); dbar(w, b) = psi(w) K(w, b)."""
    iso = graph.base
    r = iso.rhombi[w]
    _, _, xp, _ = iso.rhombus_corners(r)
    u = (xp - r.center) / abs(xp - r.center)
    return 2 * math.sqrt(math.cos(r.theta) * math.sin(r.theta)) * u


def edge_probability(
    graph: SuperpositionGraph,
    field: PotentialField,
    kinv: InverseColumns,
    w: int,
    b: int,
    K: SparseOperator,
) -> float:
    """P(edge wb in the matching) = K(w, b) K^{-1}(b, w)."""
    val = K.matrix[w, b] * kinv.entry(b, w)
    if abs(val.imag) > 1e-9:
        raise ValueError(f"edge probability has imaginary part {val.imag:.3g}")
    return float(val.real)


def edge_correlation(
    graph: SuperpositionGraph,
    field: PotentialField,
    edges: list[tuple[int, int]],
    kinv: InverseColumns | None = None,
    K: SparseOperator | None = None,
) -> float:
    """E[ prod_i (1_{e_i} - P(e_i)) ] for distinct edges e_i = (w_i, b_i):
    prod_i dbar(w_i, b_i) * det( dbar^{-1}(b_i, w_j) 1_{i != j} )."""
    if len(set(edges)) != len(edges):
        raise ValueError("edges must be distinct")
    if K is None:
        K = assemble_kasteleyn(graph, field)
    whites = [w for w, _ in edges]
    if kinv is None:
        kinv = invert_direct(graph, field, sorted(set(whites)), K)
    k = len(edges)
    mat = np.zeros((k, k), dtype=complex)
    for i, (wi, bi) in enumerate(edges):
        for j, (wj, bj) in enumerate(edges):
            if i != j:
                mat[i, j] = kinv.entry(bi, wj) / psi_gauge(graph, wj)
    pref = 1.0 + 0j
    for w, b in edges:
        pref *= psi_gauge(graph, w) * K.matrix[w, b]
    val = pref * np.linalg.det(mat)
    if abs(val.imag) > 1e-8 * max(1.0, abs(val.real)):
        raise ValueError(f"correlation has imaginary part {val.imag:.3g}")
    return float(val.real)


# ---------------------------------------------------------------------------
# heights on faces (square-lattice graphs)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FaceStep:
    """One face-to-face step crossing the edge (white, black) with sign
    (-1)**xi: xi = 0 iff the white is on the left of the step."""

    white: int
    black: int
    sign: float


@dataclass
class FacePath:
    """Lattice path of faces from the outer face to a target face."""

    steps: list[FaceStep]
    target: tuple[int, int]


def _doubled_maps(graph: SuperpositionGraph):
    """Vertex lookup in doubled (a/2) coordinates for square-lattice graphs."""
    iso = graph.base
    a = iso.mesh_eps * math.sqrt(2.0)
    origin = iso.vertices[0] - complex(a, a)
    table: dict[tuple[int, int], tuple[str, int]] = {}
    for ix, z in enumerate(iso.vertices):
        q = (z - origin) * 2 / a
        table[(round(q.real), round(q.imag))] = ("primal", ix)
    for dx, z in enumerate(iso.dual_vertices):
        q = (z - origin) * 2 / a
        table[(round(q.real), round(q.imag))] = ("dual", dx)
    for wx, z in enumerate(graph.white_pos):
        q = (z - origin) * 2 / a
        table[(round(q.real), round(q.imag))] = ("white", wx)
    return table, origin, a


def _edge_between(graph, table, p: tuple[int, int], q: tuple[int, int]):
    """(white, black_id) of the superposition edge from doubled point p to q."""
    kinds = (table.get(p), table.get(q))
    if kinds[0] is None or kinds[1] is None:
        return None
    (ka, ia), (kb, ib) = kinds
    if ka == "white":
        w, other = ia, (kb, ib)
    elif kb == "white":
        w, other = ib, (ka, ia)
    else:
        return None
    if other[0] == "primal":
        b = other[1]
    else:
        b = graph.black_of_dual(other[1])
        if b < 0:
            return None  # edge to b* is absent
    if not any(bb == b for bb, _ in graph.incidence[w]):
        return None
    return w, b


def boundary_face_path(
    graph: SuperpositionGraph,
    face: tuple[int, int],
    anchor_col: int | None = None,
) -> FacePath:
    """Vertical-first path of faces from the outer face below the straight
    boundary up to ``face`` (doubled coordinates: face (p, q) is the cell
    [p, p+1] x [q, q+1], valid for p in 1..2nx-1, q in 1..2ny-1).

    The first step crosses the bottom boundary; the path must avoid edges
    at b* (choose an anchor column away from it).
    """
    table, origin, a = _doubled_maps(graph)
    p_t, q_t = face
    p = anchor_col if anchor_col is not None else p_t
    steps: list[FaceStep] = []
    # climb from the outer face (q = 0 cell) to (p, q_t)
    for q in range(0, q_t):
        # step from cell (p, q) to (p, q+1): crosses side (p, q+1)-(p+1, q+1)
        e = _edge_between(graph, table, (p, q + 1), (p + 1, q + 1))
        if e is None:
            raise ValueError(f"face path crosses a missing edge at column {p}")
        w, b = e
        # northward step: white on the left = smaller x
        wq = (graph.white_pos[w] - origin) * 2 / a
        sign = 1.0 if round(wq.real) == p else -1.0
        steps.append(FaceStep(white=w, black=b, sign=sign))
    # then walk horizontally to (p_t, q_t)
    direction = 1 if p_t >= p else -1
    for pp in range(p, p_t, direction):
        nxt = pp + direction
        edge_col = max(pp, nxt)  # shared side at x = edge_col when stepping +/-1
        e = _edge_between(graph, table, (edge_col, q_t), (edge_col, q_t + 1))
        if e is None:
            raise ValueError("face path crosses a missing edge horizontally")
        w, b = e
        wq = (graph.white_pos[w] - origin) * 2 / a
        # eastward: white on the left = larger y; westward: flipped
        on_top = round(wq.imag) == q_t + 1
        sign = (1.0 if on_top else -1.0) * (1.0 if direction > 0 else -1.0)
        steps.append(FaceStep(white=w, black=b, sign=sign))
    return FacePath(steps=steps, target=face)


def height_moment_enumeration(
    graph: SuperpositionGraph,
    field: PotentialField,
    paths: list[FacePath],
    ensemble: DimerEnsemble | None = None,
) -> float:
    """E[prod h(face_i)] by exhaustive enumeration, heights built
    edge-by-edge along the given face paths."""
    if ensemble is None:
        ensemble = enumerate_dimers(graph, field)
    probs = {}
    for path in paths:
        for st in path.steps:
            key = (st.white, st.black)
            if key not in probs:
                probs[key] = ensemble.edge_probability(*key)
    acc = 0.0
    for k, m in enumerate(ensemble.matchings):
        term = 1.0
        for path in paths:
            h = 0.0
            for st in path.steps:
                ind = 1.0 if m[st.white] == st.black else 0.0
                h += st.sign * (ind - probs[(st.white, st.black)])
            term *= h
        acc += term * ensemble.weights[k]
    return float(acc / ensemble.Z)


def height_moment_determinant(
    graph: SuperpositionGraph,
    field: PotentialField,
    paths: list[FacePath],
    kinv: InverseColumns | None = None,
    K: SparseOperator | None = None,
) -> float:
    """E[prod h(face_i)] through the determinant expansion: sum over
    fixed-point-free permutations and one edge per path of
    sgn(sigma) prod_i sign_i dbar(w_i, b_i) dbar^{-1}(b_sigma(i), w_i)."""
    n = len(paths)
    if n < 2:
        raise ValueError("need at least two faces")
    if len({p.target for p in paths}) != n:
        raise ValueError("faces must be distinct")
    if K is None:
        K = assemble_kasteleyn(graph, field)
    whites = sorted({st.white for p in paths for st in p.steps})
    if kinv is None:
        kinv = invert_direct(graph, field, whites, K)

    # precompute dbar entries and inverse lookups
    dbar = {}
    for p in paths:
        for st in p.steps:
            key = (st.white, st.black)
            if key not in dbar:
                dbar[key] = psi_gauge(graph, st.white) * K.matrix[st.white, st.black]

    def dbar_inv(b: int, w: int) -> complex:
        return kinv.entry(b, w) / psi_gauge(graph, w)

    perms = [s for s in itertools.permutations(range(n)) if all(s[i] != i for i in range(n))]
    total = 0.0 + 0j
    for sigma in perms:
        sgn = _perm_sign(sigma)
        for combo in itertools.product(*[p.steps for p in paths]):
            term = complex(sgn)
            for i in range(n):
                st = combo[i]
                term *= st.sign * dbar[(st.white, st.black)]
                term *= dbar_inv(combo[sigma[i]].black, st.white)
            total += term
    if abs(total.imag) > 1e-7 * max(1.0, abs(total.real)):
        raise ValueError(f"height moment has imaginary part {total.imag:.3g}")
    return float(total.real)


def _perm_sign(sigma: tuple[int, ...]) -> int:
    sgn = 1
    seen = [False] * len(sigma)
    for i in range(len(sigma)):
        if seen[i]:
            continue
        ln = 0
        j = i
        while not seen[j]:
            seen[j] = True
            j = sigma[j]
            ln += 1
        if ln % 2 == 0:
            sgn = -sgn
    return sgn
