"""Path-kernel operator on Omega x [0,1], cumulant traces, det_4 summaries.

The operator acts on two copies of L^2(Omega x [0,1]).  Its kernel blocks
combine fermion two-point correlators along horizontal disk paths
gamma(x)(t) = (sqrt(1-x2^2)(1-t) + t x1, x2):

    K_{r,s}((x,t),(y,t')) = (-1)^r / (4 pi) *
        < psi^r(gamma(x)(t)) psi^s(gamma(y)(t')) > * gammadot(x)^{(r)}(t)

with the correlators normalized as <psi psi>(u,v) = 2/(u-v) + O(1) near
the diagonal.  With this normalization the n-th cumulant of the field
tested against f is (n-1)! Tr((fK)^n), and the n = 2 value equals the
direct double path integral of the two-point determinant (moment2_direct
below), which ties the operator to the height-moment pipeline.

Massless closed forms in the disk (g the Mobius map to the half-plane,
smooth sqrt branch):

    <psi psi>(u,v)  = 2 sqrt(g'(u)) sqrt(g'(v)) / (g(u) - g(v))
    <psi psi*>(u,v) = 2 sqrt(g'(u)) conj(sqrt(g'(v))) / (g(u) - conj(g(v)))

and <psi* .> entries are complex conjugates of the <psi .> ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .continuum import (
    KernelSuite,
    disk_to_halfplane,
    gauge_bv2,
    sqrt_gprime_disk,
)

__all__ = [
    "PathKernelOperator",
    "massless_correlators",
    "fd_correlators",
    "build_path_kernel",
    "cumulant_trace",
    "schatten4_norm",
    "det4_mgf",
    "moment2_direct",
    "bump_function",
]


def massless_correlators() -> Callable[[complex, complex, int, int], complex]:
    """Closed-form disk correlators <psi^r(u) psi^s(v)> at alpha = 0.

    Accepts scalars or numpy arrays (broadcasting); the returned callable
    carries ``vectorized = True`` so the assembly can batch entire blocks.
    """
    g = disk_to_halfplane
    sq = sqrt_gprime_disk

    def corr(u, v, r: int, s: int):
        if (r, s) == (0, 0):
            return 2 * sq(u) * sq(v) / (g(u) - g(v))
        if (r, s) == (0, 1):
            return 2 * sq(u) * np.conj(sq(v)) / (g(u) - np.conj(g(v)))
        if (r, s) == (1, 0):
            return np.conj(2 * sq(u) * np.conj(sq(v)) / (g(u) - np.conj(g(v))))
        return np.conj(2 * sq(u) * sq(v) / (g(u) - g(v)))

    corr.vectorized = True
    return corr


def fd_correlators(suite: KernelSuite) -> Callable[[complex, complex, int, int], complex]:
    """Correlators from the finite-difference kernel pair on the disk:
    H0 = -8 pi i F0~, H1 = -8 pi i conj(F1~), <psi^r psi^s> = H_{r+s}^{(r)}.

    For the massless field the suite's conjugate kernel is anchored at
    beta*, while the fermionic closed forms correspond to the unanchored
    conjugate; the difference is an additive constant in the first slot,
    restored here from the explicit massless formula.  For massive fields
    the boundary-value problem is uniquely solvable and the beta*-anchored
    pair is the solution, so no correction applies.
    """
    from .continuum import kappa0_star_map, disk_to_halfplane, disk_to_halfplane_deriv

    sq = sqrt_gprime_disk
    massless = suite.field.kind == "zero"

    def shift(z: complex) -> complex:
        if not massless:
            return 0j
        return kappa0_star_map(suite.beta_star, z, disk_to_halfplane,
                               disk_to_halfplane_deriv)

    def f_pair_col(us, v):
        us = np.atleast_1d(np.asarray(us, dtype=complex)).ravel()
        f0v, f1v = suite.f_at_many(us, v)
        sh = shift(v)
        return f0v + sh / 2, f1v - sh / 2

    def corr(u, v, r: int, s: int):
        scalar = np.isscalar(u) or (np.asarray(u).shape == ())
        us = np.atleast_1d(np.asarray(u, dtype=complex)).ravel()
        f0v, f1v = f_pair_col(us, v)
        squ = sq(us)
        sqv = sq(v)
        f0t = squ / sqv * f0v
        f1t = np.conj(squ) / sqv * f1v
        if (r + s) % 2 == 0:
            h = -8j * math.pi * f0t
        else:
            h = -8j * math.pi * np.conj(f1t)
        out = np.conj(h) if r == 1 else h
        return complex(out[0]) if scalar else out

    corr.column_vectorized = True
    return corr


@dataclass
class PathKernelOperator:
    """Dense discretization of the path-kernel operator.

    Space nodes come from a tensor Gauss-Legendre rule on the disk's
    bounding square masked to the disk, path-time nodes from
    Gauss-Legendre on [0,1].  ``matrix`` is the 2N x 2N block operator
    with quadrature weights folded in on the right, so matrix powers and
    traces discretize operator powers and traces.
    """

    space_points: np.ndarray
    space_weights: np.ndarray
    points: np.ndarray        # path positions gamma(x)(t)
    x_index: np.ndarray
    node_weight: np.ndarray   # dx * dt quadrature weight per node
    gammadot: np.ndarray
    matrix: np.ndarray
    n_time: int

    def n_nodes(self) -> int:
        return len(self.points)

    def f_rows(self, f: Callable[[complex], float]) -> np.ndarray:
        per_space = np.array([f(x) for x in self.space_points])
        frow = per_space[self.x_index]
        return np.concatenate([frow, frow])


def _disk_space_rule(n_side: int) -> tuple[np.ndarray, np.ndarray]:
    """Chord-product Gauss rule on the disk: x1 nodes on [-1,1], x2 nodes
    scaled to each vertical chord.  Every node gets a distinct height, so
    the horizontal path family is pairwise disjoint (no coincident paths
    in the kernel assembly)."""
    t, w = np.polynomial.legendre.leggauss(n_side)
    s, v = np.polynomial.legendre.leggauss(n_side)
    pts = []
    wts = []
    for i, (ti, wi) in enumerate(zip(t, w)):
        # slightly different chord fraction per column so mirrored columns
        # (+-t share the same chord) never produce equal heights
        lam = 0.985 + 0.01 * (i + 0.5) / n_side
        c = lam * math.sqrt(max(1.0 - ti * ti, 0.0))
        for sj, vj in zip(s, v):
            pts.append(complex(ti, c * sj))
            wts.append(wi * vj * c)
    pts = np.array(pts)
    wts = np.array(wts)
    # enforce a minimum pairwise height gap: two near-coincident heights
    # give near-parallel paths whose kernel products the path-time rule
    # cannot resolve.  Spreading heights by a floor keeps the assembly
    # uniformly resolvable; the nudges are O(1/n^2) and the integrand is
    # smooth in the height, so the quadrature perturbation is negligible.
    order = np.argsort(pts.imag)
    floor = 0.8 * (pts.imag.max() - pts.imag.min()) / len(pts)
    heights = pts.imag[order].copy()
    for k in range(1, len(heights)):
        if heights[k] - heights[k - 1] < floor:
            heights[k] = heights[k - 1] + floor
    heights -= (heights.mean() - pts.imag[order].mean())
    out = pts.copy()
    out[order] = pts[order].real + 1j * heights
    return out, wts


def build_path_kernel(
    correlator: Callable[[complex, complex, int, int], complex],
    n_space_side: int = 12,
    n_time: int = 6,
) -> PathKernelOperator:
    """Assemble the discretized operator; coincident-node entries are 0."""
    xs, wx = _disk_space_rule(n_space_side)
    tq, wt = np.polynomial.legendre.leggauss(n_time)
    tq = (tq + 1) / 2
    wt = wt / 2

    pts, xind, wnode, gdot = [], [], [], []
    for k, x in enumerate(xs):
        x1, x2 = x.real, x.imag
        start = math.sqrt(max(1 - x2 * x2, 0.0))
        vel = x1 - start
        for t, w in zip(tq, wt):
            pts.append(complex(start * (1 - t) + t * x1, x2))
            xind.append(k)
            wnode.append(wx[k] * w)
            gdot.append(vel)
    pts = np.array(pts)
    xind = np.array(xind)
    wnode = np.array(wnode)
    gdot = np.array(gdot, dtype=complex)
    N = len(pts)

    mat = np.zeros((2 * N, 2 * N), dtype=complex)
    batched = getattr(correlator, "vectorized", False)
    col_vec = getattr(correlator, "column_vectorized", False)
    for r in (0, 1):
        gfac = (gdot if r == 0 else np.conj(gdot)) * ((-1) ** r / (4 * math.pi))
        for s in (0, 1):
            if batched:
                with np.errstate(divide="ignore", invalid="ignore"):
                    blk = np.asarray(correlator(pts[:, None], pts[None, :], r, s),
                                     dtype=complex)
                np.fill_diagonal(blk, 0.0)
            elif col_vec:
                blk = np.zeros((N, N), dtype=complex)
                for b in range(N):
                    blk[:, b] = correlator(pts, pts[b], r, s)
                np.fill_diagonal(blk, 0.0)
            else:
                blk = np.zeros((N, N), dtype=complex)
                for a in range(N):
                    pa = pts[a]
                    for b in range(N):
                        if a == b:
                            continue
                        blk[a, b] = correlator(pa, pts[b], r, s)
            # finite-difference correlators are unresolved inside the
            # near-diagonal band; those cells are zeroed like the diagonal
            blk = np.nan_to_num(blk, nan=0.0, posinf=0.0, neginf=0.0)
            # the cumulant integrals exclude coincident space points, and
            # same-path pairs are exactly that measure-zero diagonal: zero
            # whole same-space-node blocks, not just coincident nodes
            same = xind[:, None] == xind[None, :]
            blk[same] = 0.0
            blk *= gfac[:, None]
            mat[r * N:(r + 1) * N, s * N:(s + 1) * N] = blk * wnode[None, :]
    return PathKernelOperator(
        space_points=xs, space_weights=wx, points=pts, x_index=xind,
        node_weight=wnode, gammadot=gdot, matrix=mat, n_time=n_time,
    )


def bump_function(radius: float = 0.7) -> Callable[[complex], float]:
    """Smooth bump supported on |z| < radius."""

    def f(z: complex) -> float:
        r2 = (abs(z) / radius) ** 2
        if r2 >= 1.0:
            return 0.0
        return math.exp(-r2 / (1.0 - r2))

    return f


def cumulant_trace(op: PathKernelOperator, f: Callable[[complex], float], n: int) -> float:
    """n-th cumulant of (phi, f): (n-1)! Tr((fK)^n)."""
    if n < 2:
        raise ValueError("n >= 2")
    fk = op.f_rows(f)[:, None] * op.matrix
    tr = complex(np.trace(np.linalg.matrix_power(fk, n)))
    val = math.factorial(n - 1) * tr
    if abs(val.imag) > 1e-7 * max(1.0, abs(val.real)):
        raise ValueError(f"cumulant trace has imaginary part {val.imag:.3g}")
    return float(val.real)


def schatten4_norm(op: PathKernelOperator) -> float:
    """Tr[(K* K)^2]^(1/4) with the adjoint in the weighted inner product."""
    wvec = np.concatenate([op.node_weight, op.node_weight])
    M = op.matrix
    Kstar = (M.conj().T * wvec[None, :]) / wvec[:, None]
    P = Kstar @ M
    return float(np.real(np.trace(P @ P)) ** 0.25)


def det4_mgf(
    op: PathKernelOperator,
    f: Callable[[complex], float],
    mu: complex,
) -> tuple[complex, complex, complex]:
    """det4(I - mu fK) exp(sum_{n=1..3} (-mu)^n/n! cumulant_n).

    Returns (mgf, log det4 by eigenvalues, log det4 by the trace series);
    cumulant_1 is zero for the centered field.
    """
    fk = op.f_rows(f)[:, None] * op.matrix
    lam = np.linalg.eigvals(mu * fk)
    logdet_eig = complex(np.sum(np.log(1 - lam) + lam + lam ** 2 / 2 + lam ** 3 / 3))
    logdet_series = 0j
    A = mu * fk
    An = np.linalg.matrix_power(A, 3)
    for n in range(4, 80):
        An = An @ A
        term = -complex(np.trace(An)) / n
        logdet_series += term
        if abs(term) < 1e-15:
            break
    cums = {n: cumulant_trace(op, f, n) for n in (2, 3)}
    s = sum((-mu) ** n / math.factorial(n) * cums[n] for n in (2, 3))
    mgf = np.exp(logdet_eig + s)
    return complex(mgf), logdet_eig, logdet_series


def moment2_direct(
    correlator: Callable[[complex, complex, int, int], complex],
    space_points: np.ndarray,
    space_weights: np.ndarray,
    f: Callable[[complex], float],
    n_time: int = 6,
) -> float:
    """Second moment of (phi, f) by the explicit double path integral:

    E[(phi,f)^2] = sum_{s1,s2} (-1)^(s1+s2) / (16 pi^2) *
        int int f f [int int <psi^{s1} psi^{s2}> <psi^{s2} psi^{s1}>
                     dz1^(s1) dz2^(s2)] dA dA

    assembled entry-by-entry, independently of the trace pipeline."""
    tq, wt = np.polynomial.legendre.leggauss(n_time)
    tq = (tq + 1) / 2
    wt = wt / 2

    fv = np.array([f(x) for x in space_points])
    keep = np.nonzero(fv != 0.0)[0]
    nodes = {}
    for k in keep:
        x = space_points[k]
        start = math.sqrt(max(1 - x.imag ** 2, 0.0))
        vel = x.real - start
        zs = np.array([complex(start * (1 - t) + t * x.real, x.imag) for t in tq])
        nodes[k] = (zs, vel * wt)
    batched = getattr(correlator, "vectorized", False)
    total = 0.0 + 0j
    for a in keep:
        za, dza = nodes[a]
        for b in keep:
            if b == a:
                continue
            zb, dzb = nodes[b]
            pair = 0.0 + 0j
            for s1 in (0, 1):
                d1 = np.conj(dza) if s1 == 1 else dza
                for s2 in (0, 1):
                    d2 = np.conj(dzb) if s2 == 1 else dzb
                    if batched:
                        with np.errstate(divide="ignore", invalid="ignore"):
                            m12 = np.asarray(correlator(za[:, None], zb[None, :], s1, s2))
                            m21 = np.asarray(correlator(zb[:, None], za[None, :], s2, s1))
                        m12 = np.nan_to_num(np.where(za[:, None] == zb[None, :], 0, m12))
                        m21 = np.nan_to_num(np.where(zb[:, None] == za[None, :], 0, m21))
                    else:
                        m12 = np.nan_to_num(np.array(
                            [[correlator(u, v, s1, s2) if u != v else 0.0
                              for v in zb] for u in za]))
                        m21 = np.nan_to_num(np.array(
                            [[correlator(v, u, s2, s1) if u != v else 0.0
                              for u in za] for v in zb]))
                    pair += (-1) ** (s1 + s2) * np.einsum("ab,ba,a,b->", m12, m21, d1, d2)
            total += fv[a] * fv[b] * space_weights[a] * space_weights[b] * pair
    total /= 16 * math.pi ** 2
    if abs(total.imag) > 1e-6 * max(1.0, abs(total.real)):
        raise ValueError(f"moment has imaginary part {total.imag:.3g}")
    return float(total.real)
