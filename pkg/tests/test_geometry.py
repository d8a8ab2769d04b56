import math

import numpy as np
import pytest

from dimerlab.geometry import (
    GeometryError,
    build_square_patch,
    build_square_superposition,
    load_isoradial,
    reflect_extend,
    save_isoradial,
)


def test_square_lattice_basics():
    g = build_square_superposition((0, 0, 1, 1), 1 / 8, 0.5 + 0j)
    assert all(abs(r.theta - math.pi / 4) < 1e-15 for r in g.base.rhombi)
    assert g.n_black() == g.n_white()
    # primal spacing eps * sqrt(2)
    a = g.base.mesh_eps * math.sqrt(2)
    assert abs(abs(g.base.vertices[1] - g.base.vertices[0]) - a) < 1e-12


def test_rhombus_diagonals_and_orientation():
    g = build_square_superposition((0, 0, 1, 1), 1 / 8)
    eps = g.base.mesh_eps
    for r in g.base.rhombi:
        xm, ym, xp, yp = g.base.rhombus_corners(r)
        assert abs(abs(xp - xm) - 2 * eps * math.cos(r.theta)) < 1e-12
        assert abs(abs(yp - ym) - 2 * eps * math.sin(r.theta)) < 1e-12
        # orthogonal diagonals, CCW order: y+ - y- = tan(theta) i (x+ - x-)
        inner = ((xp - xm) * (yp - ym).conjugate()).real
        assert abs(inner) < 1e-12
        assert abs((yp - ym) - math.tan(r.theta) * 1j * (xp - xm)) < 1e-12
        # all four sides have length eps
        for a_, b_ in ((xm, ym), (ym, xp), (xp, yp), (yp, xm)):
            assert abs(abs(a_ - b_) - eps) < 1e-12


def test_domain_too_small():
    with pytest.raises(GeometryError, match="too small"):
        build_square_superposition((0, 0, 1, 1), 0.5)


def test_corner_hint_off_boundary():
    with pytest.raises(GeometryError, match="corner_hint"):
        build_square_superposition((0, 0, 1, 1), 1 / 8, 0.5 + 0.5j)


def test_bstar_on_dual_boundary():
    g = build_square_superposition((0, 0, 1, 1), 1 / 8, 0.3 + 0j)
    from dimerlab.geometry import dual_boundary_ring

    assert g.corner_bstar in dual_boundary_ring(g.base)
    # near the hint
    assert abs(g.base.dual_vertices[g.corner_bstar].real - 0.3) < 2 * g.base.mesh_eps


def test_area_sum_matches_glued_polygon():
    # the rhombi tile a sawtooth polygon whose boundary alternates stub
    # corners (on the walls) with dual-ring corners; shoelace of that
    # explicit cycle must equal the sum of rhombus areas
    nx = ny = 3
    g = build_square_patch(nx, ny)
    eps = g.base.mesh_eps
    a = eps * math.sqrt(2)
    total = sum(eps * eps * math.sin(2 * r.theta) for r in g.base.rhombi)

    cyc = []
    for i in range(1, nx + 1):          # bottom teeth, left to right
        cyc += [complex(i * a, 0), complex((i + 0.5) * a, 0.5 * a)]
    for j in range(1, ny + 1):          # right side, bottom to top
        cyc += [complex((nx + 1) * a, j * a), complex((nx + 0.5) * a, (j + 0.5) * a)]
    for i in range(nx, 0, -1):          # top, right to left
        cyc += [complex(i * a, (ny + 1) * a), complex((i - 0.5) * a, (ny + 0.5) * a)]
    for j in range(ny, 0, -1):          # left side, top to bottom
        cyc += [complex(0, j * a), complex(0.5 * a, (j - 0.5) * a)]
    area = 0.0
    for k in range(len(cyc)):
        z1, z2 = cyc[k], cyc[(k + 1) % len(cyc)]
        area += z1.real * z2.imag - z2.real * z1.imag
    area = abs(area) / 2
    assert abs(total - area) / area < 1e-9


def test_graph_distance_bounded_by_euclidean():
    for eps in (1 / 8, 1 / 16):
        g = build_square_superposition((0, 0, 1, 1), eps)
        iso = g.base
        n = iso.n_primal()
        adj = [[] for _ in range(n)]
        for i, j, _ in iso.edges:
            adj[i].append(j)
            adj[j].append(i)
        src = 0
        dist = -np.ones(n, dtype=int)
        dist[src] = 0
        frontier = [src]
        while frontier:
            nxt = []
            for v in frontier:
                for u in adj[v]:
                    if dist[u] < 0:
                        dist[u] = dist[v] + 1
                        nxt.append(u)
            frontier = nxt
        ratios = []
        for v in range(1, n):
            euclid = abs(iso.vertices[v] - iso.vertices[src])
            ratios.append(dist[v] * eps / euclid)
        assert max(ratios) < 1.45  # sqrt(2) path constant for this family


def test_file_roundtrip(tmp_path):
    g = build_square_superposition((0, 0, 1, 1), 1 / 8, 0.4 + 0j)
    path = tmp_path / "patch.isoradial"
    save_isoradial(g, str(path))
    g2 = load_isoradial(str(path))
    assert g2.n_white() == g.n_white()
    assert g2.corner_bstar == g.corner_bstar
    assert np.allclose(g2.base.vertices, g.base.vertices)
    assert np.allclose(g2.white_pos, g.white_pos)
    # bit-exact re-export
    p2 = tmp_path / "patch2.isoradial"
    save_isoradial(g2, str(p2))
    assert path.read_bytes() == p2.read_bytes()


def test_bad_angle_rejected(tmp_path):
    g = build_square_patch(2, 2)
    path = tmp_path / "patch.isoradial"
    save_isoradial(g, str(path))
    txt = path.read_text().splitlines()
    # corrupt one rhombus angle below the eta margin
    for k, ln in enumerate(txt):
        if ln.startswith("rhombus"):
            parts = ln.split()
            parts[-1] = "0.01"
            txt[k] = " ".join(parts)
            break
    bad = tmp_path / "bad.isoradial"
    bad.write_text("\n".join(txt) + "\n")
    with pytest.raises(GeometryError, match="half-angle"):
        load_isoradial(str(bad))


def _triangular_patch_file(tmp_path):
    """Hand-built isoradial patch from the triangular/hexagonal pair:
    primal (Green) class = centers of the six triangles around one vertex,
    dual class = that vertex plus its six neighbours; theta = pi/3."""
    eps = 0.25
    s = eps * math.sqrt(3)  # triangular lattice edge
    center = 0j
    ring = [s * np.exp(1j * (math.pi / 6 + k * math.pi / 3)) for k in range(6)]
    duals = [center] + ring
    # triangle centroids: between center and consecutive ring vertices
    prim = []
    for k in range(6):
        tri = [center, ring[k], ring[(k + 1) % 6]]
        prim.append(sum(tri) / 3)
    lines = [f"isoradial v1 eps={eps:.17g} eta={0.05:.17g}"]
    for z in prim:
        lines.append(f"primal {z.real:.17g} {z.imag:.17g}")
    for d, z in enumerate(duals):
        tag = " bstar" if d == 1 else ""
        lines.append(f"dual {z.real:.17g} {z.imag:.17g}{tag}")
    theta = math.pi / 3
    # spokes: primal pair (k, k+1) across dual edge (center, ring[k+1])
    for k in range(6):
        xm, xp = k, (k + 1) % 6
        ym, yp = 0, k + 2 if k + 2 <= 6 else 1
        # orientation: fix indices so that y+ - y- = tan(theta) i (x+ - x-)
        a, b = prim[xm], prim[xp]
        d1, d2 = duals[0], duals[(k + 1) % 6 + 1]
        if abs((d2 - d1) - math.tan(theta) * 1j * (b - a)) < 1e-9:
            lines.append(f"rhombus {xm} {0} {xp} {(k + 1) % 6 + 1} {theta:.17g}")
        else:
            lines.append(f"rhombus {xm} {(k + 1) % 6 + 1} {xp} {0} {theta:.17g}")
    # rim: primal k with outside partner across dual edge (ring[k], ring[k+1])
    for k in range(6):
        a = prim[k]
        d1, d2 = duals[k + 1], duals[(k + 1) % 6 + 1]
        outside = 2 * (d1 + d2) / 2 - a
        if abs((d2 - d1) - math.tan(theta) * 1j * (outside - a)) < 1e-9:
            lines.append(f"rhombus {k} {k + 1} {-1} {(k + 1) % 6 + 1} {theta:.17g}")
        else:
            lines.append(f"rhombus {-1} {k + 1} {k} {(k + 1) % 6 + 1} {theta:.17g}")
    path = tmp_path / "tri.isoradial"
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def test_triangular_patch_loads(tmp_path):
    path = _triangular_patch_file(tmp_path)
    g = load_isoradial(path)
    assert g.n_black() == g.n_white() == 12
    thetas = {round(r.theta, 6) for r in g.base.rhombi}
    assert thetas == {round(math.pi / 3, 6)}


def test_reflection_involution_and_count():
    g = build_square_superposition((0, 0, 1, 1), 1 / 8, 0.5 + 0j)
    ref = reflect_extend(g)
    se = ref.reflection
    for z in ref.vertices[: g.n_primal]:
        assert abs(se.reflect(se.reflect(z)) - z) < 1e-12
    # points on L are fixed
    assert abs(se.reflect(se.point) - se.point) < 1e-14
    # count: |Gamma| + |Gamma inside the ball| (Gamma does not meet L)
    bstar = g.base.dual_vertices[g.corner_bstar]
    beta = se.project(bstar)
    inside = np.sum(np.abs(g.base.vertices - beta) < se.eta)
    assert len(ref.vertices) == g.n_primal + inside
    # antisymmetric extension flips sign
    vals = np.arange(g.n_primal, dtype=float)
    ext = ref.extend_dirichlet(vals)
    assert np.allclose(ext[g.n_primal:], -vals[ref.mirror_of])


def test_reflect_requires_straight_boundary():
    g = build_square_superposition((0, 0, 1, 1), 1 / 8)
    g.base.straight_edge = None
    with pytest.raises(GeometryError, match="straight"):
        reflect_extend(g)
