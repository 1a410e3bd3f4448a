"""Mesh generators built from products of elementary cubical factors.

Vertex keys are tuples; a product concatenates the keys of its factors, so a
factor's coordinates can be read back by slicing.  Minimum resolutions:

* periodic directions (circles, tori): ``N >= 3`` so cells are determined by
  their vertex sets;
* cubed sphere: ``N >= 2``;
* cube boundaries / grids used inside handles: ``m >= 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .. import ConfigurationError
from .complex import Collar, mesh_from_top_cells

MIN_PERIODIC = 3
MIN_SPHERE = 2


@dataclass
class Factor:
    dim: int
    arity: int
    top: list
    measure: Callable
    # optional collar: (slice factor, t levels, key_fn(slice_key, level) -> key, cut)
    collar: tuple | None = None
    meta: dict = field(default_factory=dict)


def _log2(n):
    return int(n).bit_length() - 1


def circle(n, length=2 * np.pi):
    if n < MIN_PERIODIC:
        raise ConfigurationError(f"circle resolution {n} below minimum {MIN_PERIODIC}")
    h = length / n
    top = [((i,), ((i + 1) % n,)) for i in range(n)]
    return Factor(1, 1, top, lambda k, keys: h**k, meta={"generator": "circle", "N": n, "length": length})


def interval(n, a=0.0, b=1.0):
    if n < 1 or b <= a:
        raise ConfigurationError("interval needs n >= 1 and b > a")
    h = (b - a) / n
    top = [((i,), (i + 1,)) for i in range(n)]
    return Factor(1, 1, top, lambda k, keys: h**k, meta={"generator": "interval", "n": n, "a": a, "b": b})


def point():
    return Factor(0, 0, [((),)], lambda k, keys: 1.0, meta={"generator": "point"})


def _grid_cells(n, m):
    """Top cells of the cube grid [0, m]^n, corners in binary order."""
    cells = []
    for base in np.ndindex(*(m,) * n):
        corners = []
        for b in range(1 << n):
            corners.append(tuple(int(base[i] + (b >> i & 1)) for i in range(n)))
        cells.append(tuple(corners))
    return cells


def grid(n, m, h=1.0):
    """Cube grid [0, m]^n (a closed n-ball)."""
    if m < 1:
        raise ConfigurationError("grid resolution must be >= 1")
    return Factor(n, n, _grid_cells(n, m), lambda k, keys: h**k, meta={"generator": "grid", "n": n, "m": m, "h": h})


def _boundary_cells(d, m):
    """Top cells of the boundary of [0, m]^(d+1)."""
    cells = []
    n = d + 1
    for axis in range(n):
        others = [a for a in range(n) if a != axis]
        for side in (0, m):
            for base in np.ndindex(*(m,) * d):
                corners = []
                for b in range(1 << d):
                    c = [0] * n
                    c[axis] = side
                    for j, a in enumerate(others):
                        c[a] = int(base[j] + (b >> j & 1))
                    corners.append(tuple(c))
                cells.append(tuple(corners))
    return cells


def cube_boundary(d, m, h=1.0):
    """The d-sphere as the boundary of the cube grid [0, m]^(d+1), flat metric."""
    if d < 0:
        return point()
    if m < 1:
        raise ConfigurationError("cube boundary resolution must be >= 1")
    top = _boundary_cells(d, m)
    if d == 0:
        top = [((0,),), ((m,),)]
    return Factor(d, d + 1, top, lambda k, keys: h**k, meta={"generator": "cube_boundary", "d": d, "m": m, "h": h})


def cubed_sphere(n, radius=1.0):
    """S^2 as the radially projected cube surface with piecewise-flat metric.

    Edge lengths are chords; a plaquette's area is the magnitude of the vector
    area of its (slightly non-planar) projected quadrilateral, so the total
    area approaches 4 pi R^2 from below as ``n`` grows.
    """
    if n < MIN_SPHERE:
        raise ConfigurationError(f"cubed-sphere resolution {n} below minimum {MIN_SPHERE}")

    def pos(key):
        x = np.array(key, float) * (2.0 / n) - 1.0
        return radius * x / np.linalg.norm(x)

    def measure(k, keys):
        p = [pos(key) for key in keys]
        if k == 1:
            return float(np.linalg.norm(p[1] - p[0]))
        if k == 2:
            return float(0.5 * np.linalg.norm(np.cross(p[3] - p[0], p[2] - p[1])))
        raise ConfigurationError("cubed sphere has no cells above dimension 2")

    return Factor(2, 3, _boundary_cells(2, n), measure,
                  meta={"generator": "sphere", "N": n, "radius": radius})


def collared_ball(n, m, levels, t_inner, t_outer, h=1.0):
    """Closed n-ball [0, m]^n with a product collar attached to its boundary.

    Ring 0 of the collar is the cube boundary; ring ``levels`` is the outer
    boundary.  Keys are ``("B", c..., 0)`` for core vertices and
    ``("R", a..., l)`` for collar rings ``l >= 1``.
    """
    if levels < 1:
        raise ConfigurationError("collar needs at least one level")
    dt = abs(t_outer - t_inner) / levels
    sl = cube_boundary(n - 1, m, h)

    def key(a, l):
        return ("B",) + tuple(a) + (0,) if l == 0 else ("R",) + tuple(a) + (l,)

    top = [tuple(("B",) + c + (0,) for c in cell) for cell in _grid_cells(n, m)]
    for cell in sl.top:
        for l in range(levels):
            top.append(tuple(key(a, l) for a in cell) + tuple(key(a, l + 1) for a in cell))

    def measure(k, keys):
        lev = {kk[-1] for kk in keys}
        if len(lev) == 1:
            return h**k
        return h ** (k - 1) * dt

    t = np.linspace(t_inner, t_outer, levels + 1)
    return Factor(n, n + 2, top, measure, collar=(sl, t, key, 0),
                  meta={"generator": "collared_ball", "n": n, "m": m, "levels": levels,
                        "t_inner": t_inner, "t_outer": t_outer, "h": h})


def product(*factors):
    """Cartesian product; cell axes are ordered factor by factor."""
    if len(factors) == 1:
        return factors[0]
    a, b = factors[0], product(*factors[1:])
    top = []
    for cb in b.top:
        for ca in [ca for ca in a.top]:
            top.append(tuple(ka + kb for kb in cb for ka in ca))

    def measure(k, keys):
        ak = list(dict.fromkeys(kk[: a.arity] for kk in keys))
        bk = list(dict.fromkeys(kk[a.arity:] for kk in keys))
        ka, kb = _log2(len(ak)), _log2(len(bk))
        ma = a.measure(ka, ak) if ka > 0 else 1.0
        mb = b.measure(kb, bk) if kb > 0 else 1.0
        return ma * mb

    collar = None
    if a.collar is not None and b.collar is not None:
        raise ConfigurationError("product of two collared factors is not supported")
    if a.collar is not None:
        sl, t, key, cut = a.collar
        collar = (product(sl, b), t, lambda s, l: key(s[: sl.arity], l) + s[sl.arity:], cut)
    elif b.collar is not None:
        sl, t, key, cut = b.collar
        collar = (product(a, sl), t, lambda s, l: s[: a.arity] + key(s[a.arity:], l), cut)
    meta = {"generator": "product", "factors": [f.meta for f in factors], "arities": [f.arity for f in factors]}
    return Factor(a.dim + b.dim, a.arity + b.arity, top, measure, collar=collar, meta=meta)


def to_mesh(f: Factor, regions=None):
    m = mesh_from_top_cells(f.dim, f.top, f.measure, meta=dict(f.meta))
    regions = dict(regions or {})
    regions.setdefault("all", np.arange(len(m.top)))
    m = m.with_(regions=regions)
    if f.collar is not None:
        sl, t, key, cut = f.collar
        slm = to_mesh(sl)
        idx = np.array([[m.key_index[key(s, l)] for l in range(len(t))] for s in slm.keys])
        m = m.with_(collar=Collar(slm, np.asarray(t, float), idx, cut))
    return m


# ---------------------------------------------------------------------------
# named generators


def torus(n, side=2 * np.pi, dim=2):
    """Flat torus with ``n`` vertices and length ``side`` per direction."""
    ns = [n] * dim if np.isscalar(n) else list(n)
    sides = [side] * len(ns) if np.isscalar(side) else list(side)
    if len(sides) != len(ns):
        raise ConfigurationError("torus: one side length per direction")
    f = product(*[circle(k, s) for k, s in zip(ns, sides)])
    f.meta = {"generator": "torus", "N": [int(k) for k in ns], "side": [float(s) for s in sides]}
    return to_mesh(f)


def sphere(n, radius=1.0):
    return to_mesh(cubed_sphere(n, radius))


def cylinder(n, a=0.0, b=1.0, levels=4, length=2 * np.pi):
    """S^1 x [a, b] with the interval direction recorded as a collar."""
    c = circle(n, length)
    f = product(c, interval(levels, a, b))
    t = np.linspace(a, b, levels + 1)
    f.collar = (c, t, lambda s, l: s + (l,), 0)
    f.meta = {"generator": "cylinder", "N": n, "a": a, "b": b, "levels": levels, "length": length}
    return to_mesh(f)


def disk(m=2, levels=4, t_inner=-2.0, t_outer=2.0, h=1.0):
    """Square 2-disk with a product collar; boundary at ``t_outer``."""
    return to_mesh(collared_ball(2, m, levels, t_inner, t_outer, h))


def handle(p, q, m=1, mq=1, levels=8, t_inner=4.0, t_outer=-4.0, h=1.0, hq=None):
    """D^(p+1) x S^(q-1) with a product collar along its boundary."""
    if p < 0 or q < 1:
        raise ConfigurationError("handle needs p >= 0 and q >= 1")
    ball = collared_ball(p + 1, m, levels, t_inner, t_outer, h)
    f = product(ball, cube_boundary(q - 1, mq, h if hq is None else hq))
    f.meta = {"generator": "handle", "p": p, "q": q, "m": m, "mq": mq, "levels": levels}
    return to_mesh(f)


def sphere_disk(p, q, m=1, mq=1, h=1.0, hq=None):
    """S^p x D^q (the region replaced by p-surgery), flat canonical metric."""
    f = product(cube_boundary(p, m, h), grid(q, mq, h if hq is None else hq)) if q > 0 else cube_boundary(p, m, h)
    f.meta = {"generator": "sphere_disk", "p": p, "q": q, "m": m, "mq": mq}
    return to_mesh(f)


def products_s1s1s2(n=4, ns=2, side=2 * np.pi, radius=1.0):
    f = product(circle(n, side), circle(n, side), cubed_sphere(ns, radius))
    f.meta = {"generator": "s1s1s2", "N": n, "Ns": ns, "side": side, "radius": radius}
    return to_mesh(f)


GENERATORS = {
    "torus": torus,
    "sphere": sphere,
    "cylinder": cylinder,
    "disk": disk,
    "handle": handle,
    "sphere_disk": sphere_disk,
    "s1s1s2": products_s1s1s2,
}


def gen_mesh(spec):
    """Build a mesh from ``{"generator": name, **params}``."""
    spec = dict(spec)
    name = spec.pop("generator", None)
    if name not in GENERATORS:
        raise ConfigurationError(f"unsupported generator {name!r}; known: {sorted(GENERATORS)}")
    try:
        return GENERATORS[name](**spec)
    except TypeError as exc:
        raise ConfigurationError(f"bad parameters for {name}: {exc}") from exc
