"""Isoradial graphs, Temperleyan superposition graphs, and straight boundaries.

Geometry conventions used throughout the package:

* Points are complex numbers (x + iy).
* A rhombus pairs a primal edge x-.x+ (primal = the class carrying the
  Laplacian and Green functions) with a dual edge y-.y+.  All four sides
  have length ``mesh_eps`` (the common circumradius of the faces), the
  primal diagonal has length 2*eps*cos(theta), the dual diagonal
  2*eps*sin(theta), and the corners are listed counterclockwise
  x-, y-, x+, y+, so that  y+ - y- = tan(theta) * i * (x+ - x-).
* White vertices are the rhombus centers.  There is one rhombus per dual
  edge; near the boundary a rhombus may have a primal corner outside the
  graph, in which case that corner index is -1 and the white-black edge
  to it is absent.  The Temperleyan corner b* is a dual vertex on the
  dual boundary; its white-black edges are absent as well.  With these
  removals |black| = |white| and the Kasteleyn matrix is square and
  non-singular (removing an interior dual vertex instead would merge its
  quadrilateral faces into a bounded face that violates the Kasteleyn
  sign condition and forces det K = 0).
* Vertices are identified by integer index, never by coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Rhombus",
    "IsoradialGraph",
    "StraightBoundary",
    "SuperpositionGraph",
    "ReflectedGraph",
    "GeometryError",
    "build_square_superposition",
    "load_isoradial",
    "save_isoradial",
    "reflect_extend",
]


class GeometryError(ValueError):
    """Raised when an input violates the lattice geometry contract."""


@dataclass(frozen=True)
class Rhombus:
    """One primal/dual edge pair; corners CCW as x-, y-, x+, y+.

    ``x_minus``/``x_plus`` index primal vertices (-1 when the corner lies
    outside the graph); ``y_minus``/``y_plus`` always index dual vertices.
    """

    x_minus: int
    x_plus: int
    y_minus: int
    y_plus: int
    center: complex
    theta: float


@dataclass(frozen=True)
class StraightBoundary:
    """A straight segment L of the domain boundary near the corner b*."""

    point: complex
    direction: complex
    eta: float

    def reflect(self, z: complex) -> complex:
        d = self.direction / abs(self.direction)
        w = (z - self.point) / d
        return self.point + d * w.conjugate()

    def project(self, z: complex) -> complex:
        d = self.direction / abs(self.direction)
        return self.point + d * ((z - self.point) / d).real


@dataclass
class IsoradialGraph:
    """Isoradial embedding data: primal vertices, dual vertices, rhombi."""

    vertices: np.ndarray          # complex, primal vertices of Gamma
    dual_vertices: np.ndarray     # complex, dual class Gamma*
    rhombi: list[Rhombus]
    mesh_eps: float
    eta_angle: float = 0.05       # bounded-angle margin
    straight_edge: StraightBoundary | None = None

    # filled at validation: primal adjacency and boundary conductances
    edges: list[tuple[int, int, float]] = field(default_factory=list)
    # (interior vertex index, theta, position of the outside neighbour)
    boundary_stubs: list[tuple[int, float, complex]] = field(default_factory=list)

    def n_primal(self) -> int:
        return len(self.vertices)

    def n_dual(self) -> int:
        return len(self.dual_vertices)

    def outer_corner(self, r: Rhombus) -> complex:
        """Position of a missing primal corner, reconstructed from the edge."""
        if r.x_minus >= 0 and r.x_plus >= 0:
            raise GeometryError("rhombus has both primal corners")
        present = r.x_plus if r.x_plus >= 0 else r.x_minus
        return 2 * r.center - self.vertices[present]

    def validate(self) -> None:
        eps = self.mesh_eps
        tol = 1e-9 * max(eps, 1.0)
        self.edges = []
        self.boundary_stubs = []
        for k, r in enumerate(self.rhombi):
            if not (self.eta_angle <= r.theta <= math.pi / 2 - self.eta_angle):
                raise GeometryError(
                    f"rhombus {k}: half-angle {r.theta:.6g} outside "
                    f"[{self.eta_angle:.3g}, {math.pi/2 - self.eta_angle:.3g}]"
                )
            if r.y_minus < 0 or r.y_plus < 0:
                raise GeometryError(f"rhombus {k}: dual corners must be present")
            ym = self.dual_vertices[r.y_minus]
            yp = self.dual_vertices[r.y_plus]
            if abs(abs(yp - ym) - 2 * eps * math.sin(r.theta)) > tol:
                raise GeometryError(f"rhombus {k}: dual diagonal length mismatch")
            if abs((ym + yp) / 2 - r.center) > tol:
                raise GeometryError(f"rhombus {k}: center is not the dual midpoint")
            if r.x_minus >= 0 and r.x_plus >= 0:
                xm = self.vertices[r.x_minus]
                xp = self.vertices[r.x_plus]
                if abs(abs(xp - xm) - 2 * eps * math.cos(r.theta)) > tol:
                    raise GeometryError(f"rhombus {k}: primal diagonal length mismatch")
                # counterclockwise orientation: y+ - y- = tan(theta) i (x+ - x-)
                if abs((yp - ym) - math.tan(r.theta) * 1j * (xp - xm)) > tol:
                    raise GeometryError(f"rhombus {k}: corners not in CCW order")
                for y in (ym, yp):
                    if abs(abs(y - xm) - eps) > tol or abs(abs(y - xp) - eps) > tol:
                        raise GeometryError(f"rhombus {k}: side length != mesh_eps")
                self.edges.append((r.x_minus, r.x_plus, r.theta))
            elif r.x_minus >= 0 or r.x_plus >= 0:
                present = r.x_plus if r.x_plus >= 0 else r.x_minus
                xin = self.vertices[present]
                xout = 2 * r.center - xin
                if abs(abs(xout - xin) - 2 * eps * math.cos(r.theta)) > tol:
                    raise GeometryError(f"rhombus {k}: stub diagonal length mismatch")
                self.boundary_stubs.append((present, r.theta, xout))
            else:
                raise GeometryError(f"rhombus {k}: no primal corner at all")
        self._check_connected()

    def _check_connected(self) -> None:
        n = self.n_primal()
        if n == 0:
            raise GeometryError("empty graph")
        adj: list[list[int]] = [[] for _ in range(n)]
        for i, j, _ in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        seen = np.zeros(n, dtype=bool)
        stack = [0]
        seen[0] = True
        while stack:
            v = stack.pop()
            for u in adj[v]:
                if not seen[u]:
                    seen[u] = True
                    stack.append(u)
        if n > 1 and not seen.all():
            raise GeometryError("primal graph is not connected")

    def rhombus_corners(self, r: Rhombus) -> tuple[complex, complex, complex, complex]:
        """Positions (x-, y-, x+, y+); missing primal corners are
        reconstructed geometrically."""
        ym = self.dual_vertices[r.y_minus]
        yp = self.dual_vertices[r.y_plus]
        if r.x_plus >= 0:
            xp = self.vertices[r.x_plus]
            xm = 2 * r.center - xp
        else:
            xm = self.vertices[r.x_minus]
            xp = 2 * r.center - xm
        if r.x_minus >= 0:
            xm = self.vertices[r.x_minus]
        return xm, ym, xp, yp


@dataclass
class SuperpositionGraph:
    """Temperleyan superposition graph.

    Black vertices: the primal class (kept whole, ids 0..n_primal-1)
    followed by the dual class minus the corner b*.  White vertices: one
    per rhombus.  ``incidence[w]`` lists the surviving (black_id, role)
    pairs with role in {"x-", "x+", "y-", "y+"}.
    """

    base: IsoradialGraph
    corner_bstar: int                     # index into base.dual_vertices
    black_pos: np.ndarray
    n_primal: int
    dual_black: np.ndarray                # black id per dual index, -1 for b*
    white_pos: np.ndarray
    incidence: list[list[tuple[int, str]]]

    def n_black(self) -> int:
        return len(self.black_pos)

    def n_white(self) -> int:
        return len(self.white_pos)

    def black_of_dual(self, dual_ix: int) -> int:
        return int(self.dual_black[dual_ix])

    def is_primal_black(self, b: int) -> bool:
        return b < self.n_primal

    def rhombus(self, w: int) -> Rhombus:
        return self.base.rhombi[w]

    def validate(self) -> None:
        self.base.validate()
        if self.n_black() != self.n_white():
            raise GeometryError(
                f"|black| = {self.n_black()} != |white| = {self.n_white()}; "
                "no perfect matchings"
            )
        if self.corner_bstar not in dual_boundary_ring(self.base):
            raise GeometryError("b* is not on the dual boundary")


def dual_boundary_ring(iso: IsoradialGraph) -> set[int]:
    """Dual vertices incident to a rhombus with a missing primal corner.

    Removing one of these merges its quadrilateral faces into the outer
    face, which keeps the Kasteleyn sign condition satisfiable."""
    ring: set[int] = set()
    for r in iso.rhombi:
        if r.x_minus < 0 or r.x_plus < 0:
            ring.add(r.y_minus)
            ring.add(r.y_plus)
    return ring


def _build_superposition(iso: IsoradialGraph, corner_hint: complex) -> SuperpositionGraph:
    ring = sorted(dual_boundary_ring(iso))
    if not ring:
        raise GeometryError("graph has no dual boundary vertex to remove")

    def key(ix: int):
        z = iso.dual_vertices[ix]
        return (abs(z - corner_hint), z.real, z.imag)

    bstar = min(ring, key=key)

    npn = iso.n_primal()
    dual_black = np.full(iso.n_dual(), -1, dtype=int)
    nxt = npn
    for d in range(iso.n_dual()):
        if d != bstar:
            dual_black[d] = nxt
            nxt += 1
    black_pos = np.concatenate([iso.vertices, np.delete(iso.dual_vertices, bstar)])

    white_pos = np.array([r.center for r in iso.rhombi], dtype=complex)
    incidence: list[list[tuple[int, str]]] = []
    for r in iso.rhombi:
        inc: list[tuple[int, str]] = []
        for role, xi in (("x-", r.x_minus), ("x+", r.x_plus)):
            if xi >= 0:
                inc.append((xi, role))
        for role, yi in (("y-", r.y_minus), ("y+", r.y_plus)):
            if yi != bstar:
                inc.append((int(dual_black[yi]), role))
        incidence.append(inc)

    g = SuperpositionGraph(
        base=iso,
        corner_bstar=bstar,
        black_pos=black_pos,
        n_primal=npn,
        dual_black=dual_black,
        white_pos=white_pos,
        incidence=incidence,
    )
    g.validate()
    return g


def build_square_superposition(
    domain: tuple[float, float, float, float],
    mesh_eps: float,
    corner_hint: complex | None = None,
) -> SuperpositionGraph:
    """Square-lattice specialization on an axis-aligned rectangle.

    ``domain`` is (xmin, ymin, xmax, ymax).  Primal spacing is
    mesh_eps * sqrt(2); every half-angle is pi/4.  The primal grid sits
    strictly inside the rectangle with its outer boundary row exactly on
    the bottom edge, which is recorded as the straight boundary; b* is
    the dual boundary vertex nearest ``corner_hint``.
    """
    xmin, ymin, xmax, ymax = domain
    w, h = xmax - xmin, ymax - ymin
    if mesh_eps <= 0 or min(w, h) <= 0:
        raise GeometryError("degenerate domain or mesh")
    if mesh_eps > min(w, h) / 8:
        raise GeometryError(
            f"domain too small: mesh_eps={mesh_eps} > min side {min(w, h)}/8"
        )
    if corner_hint is None:
        corner_hint = complex((xmin + xmax) / 2, ymin)
    if abs(corner_hint.imag - ymin) > 1e-9 * mesh_eps or not (
        xmin - 1e-12 <= corner_hint.real <= xmax + 1e-12
    ):
        raise GeometryError("corner_hint must lie on the bottom edge")

    a = mesh_eps * math.sqrt(2.0)
    nx = int(math.floor((w - 1e-12 * w) / a))
    ny = int(math.floor((h - 1e-12 * h) / a))
    if nx < 2 or ny < 2:
        raise GeometryError("domain too small: fewer than 2 interior columns/rows")
    return _square_graph(nx, ny, mesh_eps, xmin, ymin, corner_hint)


def build_square_patch(
    nx: int,
    ny: int,
    mesh_eps: float = 0.25,
    corner_hint: complex | None = None,
) -> SuperpositionGraph:
    """Square-lattice patch specified by primal cell counts (nx columns,
    ny rows of the Green-class grid), mainly for exact-enumeration work
    where the domain-size guard of ``build_square_superposition`` would
    force more white vertices than an oracle can enumerate."""
    if nx < 1 or ny < 1:
        raise GeometryError("need at least a 1 x 1 primal patch")
    a = mesh_eps * math.sqrt(2.0)
    if corner_hint is None:
        corner_hint = complex((nx + 1) * a / 2, 0.0)
    return _square_graph(nx, ny, mesh_eps, 0.0, 0.0, corner_hint)


def _square_graph(
    nx: int,
    ny: int,
    mesh_eps: float,
    xmin: float,
    ymin: float,
    corner_hint: complex,
) -> SuperpositionGraph:
    a = mesh_eps * math.sqrt(2.0)

    def pix(i: int, j: int) -> int:
        """Primal (i, j) -> index; i = 1..nx, j = 1..ny at (i*a, j*a)."""
        if 1 <= i <= nx and 1 <= j <= ny:
            return (j - 1) * nx + (i - 1)
        return -1

    verts = np.array(
        [complex(xmin + i * a, ymin + j * a) for j in range(1, ny + 1) for i in range(1, nx + 1)],
        dtype=complex,
    )

    def dix(i: int, j: int) -> int:
        """Dual (i, j) -> index; i = 0..nx, j = 0..ny at ((i+1/2)a, (j+1/2)a)."""
        return j * (nx + 1) + i

    duals = np.array(
        [
            complex(xmin + (i + 0.5) * a, ymin + (j + 0.5) * a)
            for j in range(0, ny + 1)
            for i in range(0, nx + 1)
        ],
        dtype=complex,
    )

    theta = math.pi / 4
    rhombi: list[Rhombus] = []
    # one rhombus per lattice edge meeting Gamma
    # horizontal primal edges (i-1,j)-(i,j): x+ = right, y+ above, y- below
    for j in range(1, ny + 1):
        for i in range(1, nx + 2):
            xm, xp = pix(i - 1, j), pix(i, j)
            if xm < 0 and xp < 0:
                continue
            c = complex(xmin + (i - 0.5) * a, ymin + j * a)
            rhombi.append(Rhombus(xm, xp, dix(i - 1, j - 1), dix(i - 1, j), c, theta))
    # vertical primal edges (i,j-1)-(i,j): x+ = top, y+ left, y- right
    for j in range(1, ny + 2):
        for i in range(1, nx + 1):
            xm, xp = pix(i, j - 1), pix(i, j)
            if xm < 0 and xp < 0:
                continue
            c = complex(xmin + i * a, ymin + (j - 0.5) * a)
            rhombi.append(Rhombus(xm, xp, dix(i, j - 1), dix(i - 1, j - 1), c, theta))

    xmax_eff = xmin + (nx + 1) * a
    bx = min(max(corner_hint.real, xmin + 1.5 * a), xmax_eff - 1.5 * a)
    eta = 0.9 * min(bx - xmin, xmax_eff - bx)
    straight = StraightBoundary(point=complex(bx, ymin), direction=1.0 + 0j, eta=eta)

    iso = IsoradialGraph(
        vertices=verts,
        dual_vertices=duals,
        rhombi=rhombi,
        mesh_eps=mesh_eps,
        straight_edge=straight,
    )
    iso.validate()
    return _build_superposition(iso, corner_hint)


# ---------------------------------------------------------------------------
# rhombic-embedding file format
# ---------------------------------------------------------------------------
# header:   isoradial v1 eps=<f> eta=<f>
# sections: primal <x> <y>
#           dual <x> <y> [bstar]
#           rhombus <x-> <y-> <x+> <y+> <theta>     (indices 0-based, -1 = outside)
#           straight <p0x> <p0y> <p1x> <p1y> <eta>
# Floats carry 17 significant digits so round-trips are bit-exact.


def save_isoradial(graph: SuperpositionGraph, path: str) -> None:
    iso = graph.base
    lines = [f"isoradial v1 eps={iso.mesh_eps:.17g} eta={iso.eta_angle:.17g}"]
    for z in iso.vertices:
        lines.append(f"primal {z.real:.17g} {z.imag:.17g}")
    for d, z in enumerate(iso.dual_vertices):
        tag = " bstar" if d == graph.corner_bstar else ""
        lines.append(f"dual {z.real:.17g} {z.imag:.17g}{tag}")
    for r in iso.rhombi:
        lines.append(
            f"rhombus {r.x_minus} {r.y_minus} {r.x_plus} {r.y_plus} {r.theta:.17g}"
        )
    se = iso.straight_edge
    if se is not None:
        p0 = se.point
        p1 = se.point + se.direction
        lines.append(
            f"straight {p0.real:.17g} {p0.imag:.17g} {p1.real:.17g} {p1.imag:.17g} {se.eta:.17g}"
        )
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_isoradial(path: str) -> SuperpositionGraph:
    with open(path) as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines or not lines[0].startswith("isoradial v1"):
        raise GeometryError("not a rhombic-embedding v1 file")
    header = dict(tok.split("=") for tok in lines[0].split()[2:])
    eps = float(header["eps"])
    eta_angle = float(header.get("eta", 0.05))

    verts: list[complex] = []
    duals: list[complex] = []
    rhombi: list[Rhombus] = []
    bstar_ix = -1
    straight = None
    for ln in lines[1:]:
        toks = ln.split()
        if toks[0] == "primal":
            verts.append(complex(float(toks[1]), float(toks[2])))
        elif toks[0] == "dual":
            duals.append(complex(float(toks[1]), float(toks[2])))
            if len(toks) > 3 and toks[3] == "bstar":
                bstar_ix = len(duals) - 1
        elif toks[0] == "rhombus":
            xm, ym, xp, yp = (int(t) for t in toks[1:5])
            theta = float(toks[5])
            c = (duals[ym] + duals[yp]) / 2
            rhombi.append(Rhombus(xm, xp, ym, yp, c, theta))
        elif toks[0] == "straight":
            p0 = complex(float(toks[1]), float(toks[2]))
            p1 = complex(float(toks[3]), float(toks[4]))
            straight = StraightBoundary(point=p0, direction=p1 - p0, eta=float(toks[5]))
        else:
            raise GeometryError(f"unknown section {toks[0]!r}")

    iso = IsoradialGraph(
        vertices=np.array(verts, dtype=complex),
        dual_vertices=np.array(duals, dtype=complex),
        rhombi=rhombi,
        mesh_eps=eps,
        eta_angle=eta_angle,
        straight_edge=straight,
    )
    iso.validate()
    hint = iso.dual_vertices[bstar_ix] if bstar_ix >= 0 else iso.dual_vertices[0]
    return _build_superposition(iso, hint)


# ---------------------------------------------------------------------------
# Schwarz reflection across the straight boundary
# ---------------------------------------------------------------------------


@dataclass
class ReflectedGraph:
    """Primal vertex set of Gamma extended across the straight boundary.

    ``mirror_of[k]`` gives, for each appended vertex, the index of its
    preimage in the original graph; a function with Dirichlet data on L
    extends antisymmetrically as f(phi(x)) = -f(x).
    """

    graph: SuperpositionGraph
    vertices: np.ndarray
    n_original: int
    mirror_of: np.ndarray
    reflection: StraightBoundary

    def extend_dirichlet(self, values: np.ndarray) -> np.ndarray:
        return np.concatenate([values, -values[self.mirror_of]])


def reflect_extend(graph: SuperpositionGraph) -> ReflectedGraph:
    iso = graph.base
    se = iso.straight_edge
    if se is None:
        raise GeometryError("graph has no straight boundary")
    beta_star = se.project(iso.dual_vertices[graph.corner_bstar])
    inside = np.abs(iso.vertices - beta_star) < se.eta
    idx = np.nonzero(inside)[0]
    mirrored = np.array([se.reflect(iso.vertices[i]) for i in idx], dtype=complex)
    verts = np.concatenate([iso.vertices, mirrored])
    return ReflectedGraph(
        graph=graph,
        vertices=verts,
        n_original=iso.n_primal(),
        mirror_of=idx,
        reflection=se,
    )
