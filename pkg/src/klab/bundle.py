"""Hermitian bundles with connection as unitary edge transports.

``transport[e]`` carries the fibre at ``edges[e, 0]`` to the fibre at
``edges[e, 1]``; the reversed edge uses the adjoint.  Holonomies are ordered
products along the loop (first edge rightmost).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import ConfigurationError
from .linalg import dagger, expu, logu, opnorm, opnorm_normal, random_antihermitian, random_unitary
from .mesh import Mesh
from .mesh import generators as gen

BUNDLE_FORMAT_VERSION = 1
UNITARY_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Bundle:
    base: Mesh
    transport: np.ndarray  # (E, r, r) complex
    flat_regions: tuple = ()

    @property
    def rank(self):
        return self.transport.shape[-1]

    def unitarity_defect(self):
        u = self.transport
        eye = np.eye(self.rank)
        return float(np.max(np.abs(dagger(u) @ u - eye))) if len(u) else 0.0

    def with_transport(self, transport, flat_regions=None):
        return Bundle(self.base, transport, self.flat_regions if flat_regions is None else flat_regions)


@dataclass(frozen=True, eq=False)
class GaugeTransform:
    base: Mesh
    frame_change: np.ndarray  # (V, r, r)

    @property
    def rank(self):
        return self.frame_change.shape[-1]


@dataclass(frozen=True, eq=False)
class CurvatureReport:
    field_strength: np.ndarray  # (P, r, r) anti-Hermitian, units 1/area
    norms: np.ndarray  # (P,) operator norms
    sup_norm: float
    argmax_plaquette: int


def trivial_bundle(m: Mesh, r: int = 1) -> Bundle:
    if r < 1:
        raise ConfigurationError("rank must be positive")
    return Bundle(m, np.broadcast_to(np.eye(r, dtype=complex), (m.n_edges, r, r)).copy())


def identity_gauge(m: Mesh, r: int = 1) -> GaugeTransform:
    return GaugeTransform(m, np.broadcast_to(np.eye(r, dtype=complex), (m.n_vertices, r, r)).copy())


def random_gauge(m: Mesh, r: int = 1, seed=0) -> GaugeTransform:
    rng = np.random.default_rng(seed)
    return GaugeTransform(m, random_unitary(rng, (m.n_vertices,), r))


def oriented(transport, signs):
    """Transport along edges traversed with the given signs."""
    return np.where((signs > 0)[..., None, None], transport, dagger(transport))


def path_transport(transport, edges, signs, rank):
    """Ordered products along padded paths; ``edges == -1`` marks padding."""
    n, L = edges.shape
    out = np.broadcast_to(np.eye(rank, dtype=complex), (n, rank, rank)).copy()
    for j in range(L):
        valid = edges[:, j] >= 0
        if not valid.any():
            continue
        u = oriented(transport[edges[valid, j]], signs[valid, j])
        out[valid] = u @ out[valid]
    return out


def holonomies(b: Bundle, plaquettes=None) -> np.ndarray:
    e, s = b.base.plaquette_cycles
    if plaquettes is not None:
        e, s = e[plaquettes], s[plaquettes]
    return path_transport(b.transport, e, s, b.rank)


def plaquette_logs(b: Bundle, plaquettes=None) -> np.ndarray:
    h = holonomies(b, plaquettes)
    labels = np.arange(b.base.n_plaquettes) if plaquettes is None else np.asarray(plaquettes)
    return logu(h, labels=labels)


def curvature(b: Bundle) -> CurvatureReport:
    """Field strength log(holonomy)/area per plaquette and its sup norm."""
    if b.base.dim < 2 or b.base.n_plaquettes == 0:
        z = np.zeros((0, b.rank, b.rank), complex)
        return CurvatureReport(z, np.zeros(0), 0.0, -1)
    lg = plaquette_logs(b)
    f = lg / b.base.plaquette_area[:, None, None]
    norms = opnorm_normal(f)
    i = int(np.argmax(norms))
    return CurvatureReport(f, norms, float(norms[i]), i)


def gauge(b: Bundle, g: GaugeTransform) -> Bundle:
    """transport'(v -> w) = g(w) transport(v -> w) g(v)^-1."""
    if g.base is not b.base and g.base.hash != b.base.hash:
        raise ConfigurationError("gauge transform lives on a different mesh")
    if g.rank != b.rank:
        raise ConfigurationError("gauge transform rank mismatch")
    e = b.base.edges
    gv = g.frame_change
    return b.with_transport(gv[e[:, 1]] @ b.transport @ dagger(gv[e[:, 0]]))


def perturb(b: Bundle, amplitude: float, seed=0) -> Bundle:
    """Multiply each transport by exp(A_e), A_e Gaussian anti-Hermitian, |A_e| <= amplitude."""
    if amplitude < 0:
        raise ConfigurationError("perturbation amplitude must be non-negative")
    if amplitude == 0:
        return b.with_transport(b.transport.copy())
    rng = np.random.default_rng(seed)
    a = random_antihermitian(rng, (b.base.n_edges,), b.rank, amplitude)
    return b.with_transport(b.transport @ expu(a))


# ---------------------------------------------------------------------------
# monopoles


def _torus_monopole(m: Mesh, fluxes):
    N = m.meta["N"]
    d = len(N)
    if isinstance(fluxes, dict):
        planes = {tuple(k): v for k, v in fluxes.items()}
    else:
        fl = [fluxes] if np.isscalar(fluxes) else list(fluxes)
        if len(fl) > d // 2:
            raise ConfigurationError("too many fluxes for this torus")
        planes = {(2 * i, 2 * i + 1): k for i, k in enumerate(fl)}
    coords = np.array(m.keys)
    e = m.edges
    x = coords[e[:, 0]]
    y = coords[e[:, 1]]
    axis = np.argmax((x != y), axis=1)
    # orient every edge forward along its axis
    step = (y[np.arange(len(e)), axis] - x[np.arange(len(e)), axis]) % np.array(N)[axis]
    forward = step == 1
    start = np.where(forward[:, None], x, y)
    phase = np.zeros(len(e))
    for (a, bb), k in planes.items():
        if k != int(k):
            raise ConfigurationError(f"flux {k} is not an integer")
        na, nb = N[a], N[bb]
        phi = 2 * np.pi * int(k) / (na * nb)
        on_a = axis == a
        phase[on_a] += -phi * start[on_a, bb]
        on_b = (axis == bb) & (start[:, bb] == nb - 1)
        phase[on_b] += phi * nb * start[on_b, a]
    phase = np.where(forward, phase, -phase)
    return phase


def _surface_monopole(m: Mesh, k):
    """Edge phases whose plaquette angles are 2 pi k area/A on a closed surface."""
    import scipy.sparse as sp
    from scipy.sparse.linalg import lsqr

    if not m.is_closed():
        raise ConfigurationError("monopole bundles need a closed surface")
    area = m.plaquette_area
    theta = 2 * np.pi * k * area / area.sum()
    target = theta.copy()
    target[-1] -= 2 * np.pi * k
    e, s = m.plaquette_cycles
    P = m.n_plaquettes
    d = sp.csr_matrix((s.ravel().astype(float), (np.repeat(np.arange(P), 4), e.ravel())), shape=(P, m.n_edges))
    # one equation per connected component is redundant; lsqr finds the exact solution
    sol = lsqr(d, target, atol=1e-15, btol=1e-15, iter_lim=20 * m.n_edges)[0]
    res = np.max(np.abs(d @ sol - target))
    if res > 1e-10:
        raise ConfigurationError(f"surface is not orientable/closed (flux residual {res:.2e})")
    return sol


def _factor_mesh(meta):
    g = meta["generator"]
    if g == "circle":
        return None
    if g == "sphere":
        return gen.sphere(meta["N"], meta["radius"])
    raise ConfigurationError(f"unsupported product factor {g}")


def monopole_bundle(m: Mesh, fluxes) -> Bundle:
    """Rank-1 constant-curvature bundle with the given integer fluxes.

    Tori take one flux per coordinate plane pair ((0,1), (2,3), ...) or a dict
    ``{(a, b): k}``; closed surfaces take a single flux; S^1 x S^1 x S^2 takes
    ``(k_torus, k_sphere)``.
    """
    fl = np.atleast_1d(np.asarray(list(fluxes.values()) if isinstance(fluxes, dict) else fluxes, dtype=float))
    if np.any(fl != np.round(fl)):
        raise ConfigurationError(f"fluxes must be integers, got {fluxes}")
    g = m.meta.get("generator")
    if g == "torus":
        phase = _torus_monopole(m, fluxes)
    elif g == "s1s1s2":
        kt, ks = (list(fluxes) + [0, 0])[:2]
        t2 = gen.torus(m.meta["N"], m.meta["side"], 2)
        s2 = gen.sphere(m.meta["Ns"], m.meta["radius"])
        pt = _torus_monopole(t2, kt)
        ps = _surface_monopole(s2, ks) if ks else np.zeros(s2.n_edges)
        keys = m.keys
        e = m.edges
        phase = np.zeros(len(e))
        for i, (v, w) in enumerate(e):
            kv, kw = keys[v], keys[w]
            if kv[:2] != kw[:2]:
                ei, si = t2.edge_lookup([t2.key_index[kv[:2]]], [t2.key_index[kw[:2]]])
                phase[i] = si[0] * pt[ei[0]]
            else:
                ei, si = s2.edge_lookup([s2.key_index[kv[2:]]], [s2.key_index[kw[2:]]])
                phase[i] = si[0] * ps[ei[0]]
    elif m.dim == 2:
        if len(fl) != 1:
            raise ConfigurationError("a surface takes exactly one flux")
        phase = _surface_monopole(m, int(fl[0]))
    else:
        raise ConfigurationError(f"monopole bundles are not available on {g or 'this'} mesh")
    # holonomy angle -2 pi k area/A, so that c1 = (i/2pi) F integrates to +k
    return Bundle(m, np.exp(-1j * phase)[:, None, None])


# ---------------------------------------------------------------------------
# maps


@dataclass(frozen=True, eq=False)
class MeshMap:
    """Cellular map given on vertices, with edges sent to target edge paths.

    ``path_edges[e]``/``path_signs[e]`` list the (signed) target edges traced by
    source edge ``e`` (padding -1); an empty path is a collapsed edge.
    """

    source: Mesh
    target: Mesh
    vertex_map: np.ndarray
    path_edges: np.ndarray
    path_signs: np.ndarray
    degree: int = 0
    lipschitz: float = 1.0
    meta: dict = field(default_factory=dict)


def _map_degree(source, target, vmap):
    from collections import Counter

    from .mesh.complex import relative_orientation

    if source.dim != target.dim or source.dim == 0:
        return 0
    counts = Counter()
    img = vmap[source.top]
    for c in img:
        if len(set(c.tolist())) != len(c):
            continue
        fi = target.face_index(target.dim, c)
        if fi < 0:
            continue
        counts[fi] += relative_orientation(c, target.top[fi])
    vals = Counter(v for v in counts.values() if v != 0)
    return vals.most_common(1)[0][0] if vals else 0


def mesh_map(source: Mesh, target: Mesh, vertex_map, paths=None, degree=None) -> MeshMap:
    """Build a map from a vertex map; ``paths`` overrides edge images.

    Without an override each edge must map to a target edge or to a single
    vertex.  ``paths`` maps source edge ids to lists of ``(target_edge, sign)``.
    """
    vmap = np.asarray(vertex_map, dtype=np.int64)
    if len(vmap) != source.n_vertices:
        raise ConfigurationError("vertex map has the wrong length")
    paths = paths or {}
    e = source.edges
    a, b = vmap[e[:, 0]], vmap[e[:, 1]]
    L = max([1] + [len(p) for p in paths.values()])
    pe = -np.ones((len(e), L), dtype=np.int64)
    ps = np.zeros((len(e), L), dtype=np.int64)
    auto = np.array([i not in paths for i in range(len(e))], bool)
    move = auto & (a != b)
    if move.any():
        try:
            te, ts = target.edge_lookup(a[move], b[move])
        except Exception as exc:
            raise ConfigurationError(f"incompatible map: {exc}") from exc
        pe[move, 0] = te
        ps[move, 0] = ts
    for i, p in paths.items():
        for j, (te, ts) in enumerate(p):
            pe[i, j] = te
            ps[i, j] = ts
    tl = target.edge_length
    img_len = np.where(pe >= 0, tl[np.clip(pe, 0, None)], 0.0).sum(axis=1)
    lip = float(np.max(img_len / source.edge_length)) if len(e) else 0.0
    deg = _map_degree(source, target, vmap) if degree is None else degree
    return MeshMap(source, target, vmap, pe, ps, int(deg), lip)


def identity_map(m: Mesh) -> MeshMap:
    return mesh_map(m, m, np.arange(m.n_vertices))


def covering_projection(cov) -> MeshMap:
    return mesh_map(cov.total, cov.base, cov.projection)


def pullback(b: Bundle, f: MeshMap) -> Bundle:
    """transport'(e) = transport along f(e) (identity on collapsed edges)."""
    if f.target is not b.base and f.target.hash != b.base.hash:
        raise ConfigurationError("map target is not the bundle base")
    u = path_transport(b.transport, f.path_edges, f.path_signs, b.rank)
    return Bundle(f.source, u)


def restrict(b: Bundle, sub: Mesh, parent_vertex) -> Bundle:
    """Bundle on a submesh whose vertices map to ``parent_vertex`` in b.base."""
    pv = np.asarray(parent_vertex)
    e, s = b.base.edge_lookup(pv[sub.edges[:, 0]], pv[sub.edges[:, 1]])
    return Bundle(sub, oriented(b.transport[e], s))


def direct_image(b: Bundle, cov) -> Bundle:
    """Push forward along a finite covering: fibres are direct sums over sheets."""
    if cov.total is not b.base and cov.total.hash != b.base.hash:
        raise ConfigurationError("bundle does not live on the covering space")
    base = cov.base
    n, r = cov.sheets, b.rank
    tot = cov.total
    te = tot.edges
    be, bs = base.edge_lookup(cov.projection[te[:, 0]], cov.projection[te[:, 1]])
    out = np.zeros((base.n_edges, n * r, n * r), complex)
    src_sheet = np.where(bs > 0, cov.sheet_of[te[:, 0]], cov.sheet_of[te[:, 1]])
    dst_sheet = np.where(bs > 0, cov.sheet_of[te[:, 1]], cov.sheet_of[te[:, 0]])
    u = oriented(b.transport, bs)
    for i in range(len(te)):
        s0, s1 = src_sheet[i] * r, dst_sheet[i] * r
        out[be[i], s1:s1 + r, s0:s0 + r] = u[i]
    return Bundle(base, out)


# ---------------------------------------------------------------------------
# checks and io


def flat_region_defect(b: Bundle, region: str) -> float:
    """Max |holonomy - I| over plaquettes of a named region."""
    pl = b.base.region_cells(region, 2)
    if len(pl) == 0:
        return 0.0
    h = holonomies(b, pl)
    return float(np.max(opnorm(h - np.eye(b.rank))))


def bundle_to_dict(b: Bundle) -> dict:
    t = b.transport
    return {
        "version": BUNDLE_FORMAT_VERSION,
        "mesh_hash": b.base.hash,
        "rank": b.rank,
        "transports": np.stack([t.real, t.imag], axis=-1).tolist(),
        "flat_regions": list(b.flat_regions),
    }


def bundle_from_dict(d: dict, base: Mesh) -> Bundle:
    if d.get("version") != BUNDLE_FORMAT_VERSION:
        raise ConfigurationError(f"unsupported bundle format version {d.get('version')}")
    if d["mesh_hash"] != base.hash:
        raise ConfigurationError("bundle was saved for a different mesh")
    a = np.asarray(d["transports"], float)
    t = a[..., 0] + 1j * a[..., 1]
    if t.shape != (base.n_edges, d["rank"], d["rank"]):
        raise ConfigurationError("transport array has the wrong shape")
    return Bundle(base, t, tuple(d.get("flat_regions", ())))


def save_bundle(b: Bundle, path):
    with open(path, "w") as fh:
        json.dump(bundle_to_dict(b), fh)


def load_bundle(path, base: Mesh) -> Bundle:
    with open(path) as fh:
        return bundle_from_dict(json.load(fh), base)


def perturbed_flat(m: Mesh, delta: float, r: int = 1, seed=0, gauged=True) -> Bundle:
    """Near-flat bundle with curvature sup norm equal to ``delta``.

    A seeded random Lie-algebra field A_e is scaled until the sup norm of
    exp(s A) hits delta (root bracketing), then a random gauge is applied.
    """
    from scipy.optimize import brentq

    if delta < 0:
        raise ConfigurationError("target curvature must be non-negative")
    rng = np.random.default_rng(seed)
    a = random_antihermitian(rng, (m.n_edges,), r, 1.0)
    base = trivial_bundle(m, r)
    if delta > 0:
        def excess(s):
            return curvature(base.with_transport(expu(s * a))).sup_norm - delta

        hi = delta * float(np.min(m.edge_length))
        while excess(hi) < 0:
            hi *= 2
            if hi > 1.0:
                raise ConfigurationError(f"cannot reach curvature {delta} on this mesh")
        s = brentq(excess, 0.0, hi, xtol=1e-15, rtol=1e-14)
        base = base.with_transport(expu(s * a))
    if gauged:
        base = gauge(base, random_gauge(m, r, rng.integers(2 ** 32)))
    return base


def circle_holonomy_bundle(m: Mesh, angle: float, axis: int = 0, period: int | None = None) -> Bundle:
    """Flat rank-1 bundle with holonomy exp(i angle) around a periodic key axis.

    Works on meshes whose vertex keys are integer tuples with a periodic
    coordinate ``axis`` (circles, cylinders, tori).
    """
    coords = np.array(m.keys)
    if coords.ndim != 2 or not np.issubdtype(coords.dtype, np.integer):
        raise ConfigurationError("mesh keys are not integer coordinates")
    n = int(period or coords[:, axis].max() + 1)
    e = m.edges
    d = (coords[e[:, 1], axis] - coords[e[:, 0], axis]) % n
    phase = np.where(d == 1, angle / n, np.where(d == n - 1, -angle / n, 0.0))
    return Bundle(m, np.exp(1j * phase)[:, None, None])


def direct_sum(*bundles: Bundle) -> Bundle:
    """Block-diagonal sum of bundles over one mesh."""
    if not bundles:
        raise ConfigurationError("direct sum of nothing")
    base = bundles[0].base
    r = sum(b.rank for b in bundles)
    out = np.zeros((base.n_edges, r, r), complex)
    i = 0
    for b in bundles:
        if b.base is not base and b.base.hash != base.hash:
            raise ConfigurationError("direct sum needs a common base")
        out[:, i:i + b.rank, i:i + b.rank] = b.transport
        i += b.rank
    return Bundle(base, out)
