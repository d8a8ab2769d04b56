"""Potentials, drift/mass fields, near-critical weights, and Kasteleyn phases.

The drift is the gradient of a scalar potential V, encoded as the complex
number alpha = dV/dx + i dV/dy, and the mass field is
M = Laplacian(V) + |grad V|^2, so that exp(V) is massive harmonic both in
the continuum and (with the discrete mass below) on the lattice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import SuperpositionGraph

__all__ = [
    "PotentialField",
    "make_potential",
    "eval_field",
    "discrete_mass",
    "EdgeWeights",
    "edge_weights",
    "kasteleyn_phases",
]

_FD_STEP = 1e-5


def _mobius_disk_to_halfplane(z: complex) -> complex:
    return 1j * (1 - z) / (1 + z)


@dataclass
class PotentialField:
    """Scalar potential with closed-form drift and mass where available."""

    kind: str
    V: Callable[[complex], float]
    alpha_exact: Callable[[complex], complex] | None = None
    mass_exact: Callable[[complex], float] | None = None
    params: dict | None = None

    def value(self, z: complex) -> float:
        return float(self.V(z))

    def alpha(self, z: complex) -> complex:
        if self.alpha_exact is not None:
            return self.alpha_exact(z)
        return self._alpha_fd(z)

    def mass(self, z: complex) -> float:
        if self.mass_exact is not None:
            return float(self.mass_exact(z))
        lap = self._laplacian_fd(z)
        a = self.alpha(z)
        return float(lap + abs(a) ** 2)

    # 4th-order central differences; no symbolic engine needed
    def _alpha_fd(self, z: complex) -> complex:
        h = _FD_STEP
        c = (-1.0, 8.0, -8.0, 1.0)
        pts_x = (z + 2 * h, z + h, z - h, z - 2 * h)
        pts_y = (z + 2j * h, z + 1j * h, z - 1j * h, z - 2j * h)
        dx = sum(ci * self.V(p) for ci, p in zip(c, pts_x)) / (12 * h)
        dy = sum(ci * self.V(p) for ci, p in zip(c, pts_y)) / (12 * h)
        return complex(dx, dy)

    def _laplacian_fd(self, z: complex) -> float:
        h = _FD_STEP
        cs = (-1 / 12, 4 / 3, -5 / 2, 4 / 3, -1 / 12)
        offs = (-2, -1, 0, 1, 2)
        dxx = sum(ci * self.V(z + o * h) for ci, o in zip(cs, offs)) / h**2
        dyy = sum(ci * self.V(z + o * 1j * h) for ci, o in zip(cs, offs)) / h**2
        return float(dxx + dyy)

    def log_convex_on(self, probes: np.ndarray) -> bool:
        """True iff M > 0 at every probe point."""
        return bool(min(self.mass(z) for z in probes) > 0)


def make_potential(spec: dict | PotentialField) -> PotentialField:
    """Build a potential from a config mapping.

    Supported kinds: {"kind": "zero"}, {"kind": "linear", "a": 1.0},
    {"kind": "quadratic", "c": 0.25}, and
    {"kind": "halfplane_profile", "a": -1.0, "b": 0.0} which is
    V(z) = a*Im(g(z)) + b for the Mobius map g from the unit disk to the
    upper half-plane.
    """
    if isinstance(spec, PotentialField):
        return spec
    kind = spec["kind"]
    if kind == "zero":
        return PotentialField(
            "zero", V=lambda z: 0.0, alpha_exact=lambda z: 0j, mass_exact=lambda z: 0.0,
            params={},
        )
    if kind == "linear":
        a = float(spec["a"])
        return PotentialField(
            "linear",
            V=lambda z: a * z.real,
            alpha_exact=lambda z: complex(a, 0.0),
            mass_exact=lambda z: a * a,
            params={"a": a},
        )
    if kind == "quadratic":
        c = float(spec["c"])
        return PotentialField(
            "quadratic",
            V=lambda z: c * z.real**2,
            alpha_exact=lambda z: complex(2 * c * z.real, 0.0),
            mass_exact=lambda z: 2 * c + 4 * c * c * z.real**2,
            params={"c": c},
        )
    if kind == "halfplane_profile":
        a = float(spec["a"])
        b = float(spec.get("b", 0.0))

        def V(z: complex) -> float:
            return a * _mobius_disk_to_halfplane(z).imag + b

        def alpha(z: complex) -> complex:
            gp = -2j / (1 + z) ** 2
            return 1j * a * gp.conjugate()

        def mass(z: complex) -> float:
            gp = -2j / (1 + z) ** 2
            return a * a * abs(gp) ** 2

        return PotentialField("halfplane_profile", V=V, alpha_exact=alpha,
                              mass_exact=mass, params={"a": a, "b": b})
    if kind == "user":
        return PotentialField("user", V=spec["V"], params={})
    raise ValueError(f"unknown potential kind {kind!r}")


def eval_field(field: PotentialField, z: complex) -> tuple[float, complex, float]:
    """(V, alpha, M) at z."""
    return field.value(z), field.alpha(z), field.mass(z)


def discrete_mass(graph: SuperpositionGraph, field: PotentialField) -> np.ndarray:
    """m(x) = exp(-V(x)) * sum over lattice neighbours x' of x of
    tan(theta) * (exp(V(x')) - exp(V(x))), per primal vertex of Gamma.

    Neighbours just outside Gamma contribute through the boundary stubs,
    with V evaluated at the reconstructed outside position."""
    iso = graph.base
    n = iso.n_primal()
    V = np.array([field.value(z) for z in iso.vertices])
    m = np.zeros(n)
    for i, j, theta in iso.edges:
        t = math.tan(theta)
        m[i] += t * (math.exp(V[j]) - math.exp(V[i]))
        m[j] += t * (math.exp(V[i]) - math.exp(V[j]))
    for i, theta, xout in iso.boundary_stubs:
        m[i] += math.tan(theta) * (math.exp(field.value(xout)) - math.exp(V[i]))
    return m * np.exp(-V)


@dataclass
class EdgeWeights:
    """Gauge-changed dimer weights and Kasteleyn phases per white vertex.

    For the rhombus of white w with corners x-, y-, x+, y+:
      weight(w, x-) = sqrt(tan(theta) * exp(V(x+) - V(x-)))
      weight(w, x+) = sqrt(tan(theta) * exp(V(x-) - V(x+)))
      weight(w, y+-) = exp(V(y+-)) / sqrt(tan(theta) * exp(V(x+) + V(x-)))
    and the phases run counterclockwise 1, i, -1, -i starting at x+.
    """

    graph: SuperpositionGraph
    weight: list[dict[str, float]]    # per white, role -> positive weight
    phase: list[dict[str, complex]]   # per white, role -> unit phase
    c_plus: np.ndarray                # near-critical conductance x- -> x+
    c_minus: np.ndarray               # near-critical conductance x+ -> x-


_PHASES = {"x+": 1 + 0j, "y+": 1j, "x-": -1 + 0j, "y-": -1j}


def kasteleyn_phases(graph: SuperpositionGraph) -> list[dict[str, complex]]:
    """Unit phases on the white-black edges: around each white vertex the
    surviving edges carry the counterclockwise pattern 1, i, -1, -i
    anchored at the x+ corner, so every inner face product is -1."""
    phases: list[dict[str, complex]] = []
    for inc in graph.incidence:
        phases.append({role: _PHASES[role] for _, role in inc})
    return phases


def edge_weights(graph: SuperpositionGraph, field: PotentialField) -> EdgeWeights:
    iso = graph.base
    Vd = np.array([field.value(z) for z in iso.dual_vertices])
    nw = graph.n_white()
    weight: list[dict[str, float]] = []
    c_plus = np.zeros(nw)
    c_minus = np.zeros(nw)
    for w, r in enumerate(iso.rhombi):
        t = math.tan(r.theta)
        xm, _, xp, _ = iso.rhombus_corners(r)
        vxm, vxp = field.value(xm), field.value(xp)
        c_plus[w] = math.exp(vxp - vxm) * t
        c_minus[w] = math.exp(vxm - vxp) * t
        wt = {}
        if r.x_minus >= 0:
            wt["x-"] = math.sqrt(t * math.exp(vxp - vxm))
        if r.x_plus >= 0:
            wt["x+"] = math.sqrt(t * math.exp(vxm - vxp))
        denom = math.sqrt(t * math.exp(vxp + vxm))
        surviving = {role for _, role in graph.incidence[w]}
        for role, yi in (("y-", r.y_minus), ("y+", r.y_plus)):
            if role in surviving:
                wt[role] = math.exp(Vd[yi]) / denom
        weight.append(wt)
    return EdgeWeights(
        graph=graph,
        weight=weight,
        phase=kasteleyn_phases(graph),
        c_plus=c_plus,
        c_minus=c_minus,
    )
