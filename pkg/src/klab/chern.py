"""Lattice Chern-Weil densities, Chern numbers and the K-cross admissibility test.

Normalization: c1 = (i/2pi) tr F, c1^2 = -(1/4pi^2) trF^trF and
c2 = (1/8pi^2)(tr F^F - trF^trF).  On a 4-cube the wedge is the pairing
2 (F01 F23 - F02 F13 + F03 F12) of face fluxes, each averaged over the four
parallel faces after transport to the cube's first corner.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import ConfigurationError
from .bundle import Bundle, flat_region_defect, path_transport, plaquette_logs
from .linalg import dagger, logu

MONOMIALS = {2: ("c1",), 4: ("c1^2", "c2")}
_PAIRS = (((0, 1), (2, 3), 1.0), ((0, 2), (1, 3), -1.0), ((0, 3), (1, 2), 1.0))


@dataclass(frozen=True)
class ChernPolynomial:
    """Linear combination of degree-dim Chern monomials."""

    dim: int
    terms: dict = field(default_factory=dict)  # monomial -> Fraction

    def __str__(self):
        if not self.terms:
            return "0"
        return " + ".join(f"{c}*{m}" for m, c in self.terms.items())


def parse_polynomial(expr: str, dim: int | None = None) -> ChernPolynomial:
    """Parse e.g. ``"c1"``, ``"c1^2 - 2c2"``, ``"1/2 c1^2 - c2"``, ``"0"``."""
    s = expr.replace(" ", "").replace("*", "")
    if not s:
        raise ConfigurationError("empty polynomial")
    if s[0] not in "+-":
        s = "+" + s
    terms: dict = {}
    pos = 0
    tok = re.compile(r"([+-])(\d+(?:/\d+)?)?(c1\^2|c1|c2)?")
    while pos < len(s):
        m = tok.match(s, pos)
        if not m or m.end() == pos or (m.group(2) is None and m.group(3) is None):
            raise ConfigurationError(f"cannot parse polynomial near {s[pos:]!r}")
        sign, coef, mono = m.groups()
        c = Fraction(coef) if coef else Fraction(1)
        if sign == "-":
            c = -c
        if mono is None:
            if c != 0:
                raise ConfigurationError("constant terms have no Chern number")
        else:
            terms[mono] = terms.get(mono, Fraction(0)) + c
        pos = m.end()
    degs = {2 if m == "c1" else 4 for m in terms}
    if len(degs) > 1:
        raise ConfigurationError("polynomial mixes degrees")
    pdim = degs.pop() if degs else dim
    if dim is not None and pdim != dim:
        raise ConfigurationError(f"polynomial of degree {pdim} on a {dim}-dimensional mesh")
    return ChernPolynomial(pdim if pdim is not None else 0, {k: v for k, v in terms.items() if v != 0})


@dataclass(frozen=True, eq=False)
class ChernReport:
    dim: int
    densities: dict  # monomial -> per-cell array (plaquettes in 2D, 4-cubes in 4D)
    component_totals: dict  # monomial -> list of per-component totals
    totals: dict  # monomial -> float
    residuals: dict  # monomial -> distance to nearest integer

    def as_dict(self, with_densities=False):
        d = {"dim": self.dim, "totals": self.totals, "residuals": self.residuals}
        if with_densities:
            d["densities"] = {k: v.tolist() for k, v in self.densities.items()}
        return d


def _cube_face_logs(b: Bundle):
    """Face flux logs per 4-cube, shape (n4, 4, 4, r, r), based at corner 0."""
    m = b.base
    cubes = m.cells[4]
    n4, r = len(cubes), b.rank
    phi = np.zeros((n4, 4, 4, r, r), complex)
    for a in range(4):
        for c in range(a + 1, 4):
            others = [k for k in range(4) if k not in (a, c)]
            acc = np.zeros((n4, r, r), complex)
            for off in range(4):
                base = sum(1 << others[i] for i in range(2) if off >> i & 1)
                # path corner0 -> base along the transverse axes
                steps = [0]
                for i in range(2):
                    if off >> i & 1:
                        steps.append(steps[-1] + (1 << others[i]))
                loop = [base, base + (1 << a), base + (1 << a) + (1 << c), base + (1 << c), base]
                p = _legs(m, cubes, steps)
                h = _legs(m, cubes, loop)
                pt = path_transport(b.transport, *p, r)
                w = dagger(pt) @ path_transport(b.transport, *h, r) @ pt
                acc += logu(w, labels=np.arange(n4), kind="4-cell face")
            phi[:, a, c] = acc / 4
            phi[:, c, a] = -acc / 4
    return phi


def _legs(m, cubes, corners):
    if len(corners) < 2:
        n = len(cubes)
        return -np.ones((n, 1), np.int64), np.zeros((n, 1), np.int64)
    es, ss = [], []
    for x, y in zip(corners[:-1], corners[1:]):
        e, s = m.edge_lookup(cubes[:, x], cubes[:, y])
        es.append(e)
        ss.append(s)
    return np.stack(es, 1), np.stack(ss, 1)


def _component_of_cells(m, cells):
    comp = m.components()
    return comp[cells[:, 0]]


def _sum_by_component(dens, comp):
    out = []
    for c in np.unique(comp):
        out.append(math.fsum(dens[comp == c]))
    return out


def chern_densities(b: Bundle) -> ChernReport:
    m = b.base
    if m.dim not in MONOMIALS:
        raise ConfigurationError(f"Chern densities are implemented in dimensions 2 and 4, not {m.dim}")
    if m.dim == 2:
        lg = plaquette_logs(b)
        dens = {"c1": np.real(1j * np.trace(lg, axis1=1, axis2=2)) / (2 * np.pi)}
        comp = _component_of_cells(m, m.cells[2])
    else:
        phi = _cube_face_logs(b)
        tr = np.trace(phi, axis1=-2, axis2=-1)
        trtr = sum(sg * tr[:, p[0], p[1]] * tr[:, q[0], q[1]] for p, q, sg in _PAIRS)
        trff = sum(sg * np.einsum("nij,nji->n", phi[:, p[0], p[1]], phi[:, q[0], q[1]]) for p, q, sg in _PAIRS)
        dens = {
            "c1^2": np.real(-2 * trtr) / (4 * np.pi ** 2),
            "c2": np.real(2 * (trff - trtr)) / (8 * np.pi ** 2),
        }
        comp = _component_of_cells(m, m.cells[4])
    comp_totals = {k: _sum_by_component(v, comp) for k, v in dens.items()}
    totals = {k: float(sum(v)) for k, v in comp_totals.items()}
    resid = {k: abs(v - round(v)) for k, v in totals.items()}
    return ChernReport(m.dim, dens, comp_totals, totals, resid)


def chern_number(b: Bundle, poly, report: ChernReport | None = None) -> float:
    if isinstance(poly, str):
        poly = parse_polynomial(poly, b.base.dim)
    if poly.terms and poly.dim != b.base.dim:
        raise ConfigurationError(f"polynomial of degree {poly.dim} on a {b.base.dim}-dimensional mesh")
    if not poly.terms:
        return 0.0
    rep = report or chern_densities(b)
    return float(sum(float(c) * rep.totals[mo] for mo, c in poly.terms.items()))


def basis_totals(b: Bundle, report: ChernReport | None = None) -> dict:
    rep = report or chern_densities(b)
    return dict(rep.totals)


@dataclass(frozen=True)
class KCrossVerdict:
    admissible: bool
    witness: str | None
    value: float
    reason: str


def in_k_cross(b: Bundle, tol: float = 1e-6) -> KCrossVerdict:
    """Condition (i): flagged flat regions carry identity holonomy; (ii): a nonzero Chern number."""
    for reg in b.flat_regions:
        d = flat_region_defect(b, reg)
        if d > tol:
            return KCrossVerdict(False, None, d, f"region {reg!r} is not flat (defect {d:.3g})")
    if b.base.dim not in MONOMIALS:
        return KCrossVerdict(False, None, 0.0, f"no Chern basis in dimension {b.base.dim}")
    rep = chern_densities(b)
    best = max(rep.totals, key=lambda k: abs(rep.totals[k]))
    val = rep.totals[best]
    if abs(val) > tol:
        return KCrossVerdict(True, best, val, "ok")
    return KCrossVerdict(False, None, val, "all Chern numbers vanish")
