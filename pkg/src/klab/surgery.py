"""Bundles across surgery: collar flattening, transplant and Chern bookkeeping.

The transplant cuts a surgered mesh M# at the middle of its collar, frames
the bundle on the cut slice, extends each side by a flat trivial end and
caps both with the model piece Y = S^p x D^q.  The pieces M' u Y and
X u (-Y) are closed and their Chern totals add up to those of M#.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import shortest_path
import scipy.sparse as sp

from . import ConfigurationError
from .bundle import Bundle, curvature, mesh_map, monopole_bundle, oriented, perturbed_flat, pullback, restrict
from .chern import MONOMIALS, chern_densities
from .linalg import dagger, expu, logu
from .mesh import Mesh
from .mesh import generators as gen
from .mesh.rewrite import double, glue, submesh
from .trivialize import CutoffProfile, FrameCertificate, Obstruction, collar_extend, flatten_collar, trivialize
from .bundle import GaugeTransform


@dataclass(frozen=True, eq=False)
class TransplantResult:
    bundle_MY: Bundle = field(repr=False)
    bundle_XY: Bundle = field(repr=False)
    integrals: dict  # monomial -> {"M#": .., "M'uY": .., "Xu-Y": ..}
    identity_residual: float
    certificate: FrameCertificate = field(repr=False)
    flatten_factor: float = 1.0

    def as_dict(self):
        return {"integrals": self.integrals, "identity_residual": self.identity_residual,
                "slice_residual": self.certificate.residual, "flatten_factor": self.flatten_factor}


def glue_bundles(pieces, identify, fixed, meta=None) -> Bundle:
    """Glue ``(tag, mesh, bundle_or_None)`` pieces; pieces without a bundle carry the identity."""
    g = glue([(t, m, None) for t, m, _ in pieces], identify, fixed=fixed, meta=meta)
    out = g.mesh
    ranks = {bb.rank for _, _, bb in pieces if bb is not None}
    r = ranks.pop() if ranks else 1
    tr = np.broadcast_to(np.eye(r, dtype=complex), (out.n_edges, r, r)).copy()
    for tag, m, bb in pieces:
        if bb is None:
            continue
        vm = g.vmap[tag]
        e, s = out.edge_lookup(vm[m.edges[:, 0]], vm[m.edges[:, 1]])
        tr[e] = oriented(bb.transport, s)
    return Bundle(out, tr)


def _side(b: Bundle, region: str):
    m = b.base
    sub, parent = submesh(m, m.regions[region], tag=region)
    inv = -np.ones(m.n_vertices, dtype=np.int64)
    inv[parent] = np.arange(len(parent))
    return restrict(b, sub, parent), inv


def _totals(b: Bundle):
    if b.base.dim not in MONOMIALS:
        return {}
    return chern_densities(b).totals


def _slice_frame(bf: Bundle, p: int, eps: float, basepoint=0):
    """Frame on the cut slice; for p = 1 through the double of the X side."""
    m = bf.base
    col = m.collar
    sl = col.slice
    cut_ids = col.vertex_index[:, col.cut]
    if p != 1:
        return trivialize(restrict(bf, sl, cut_ids), eps, basepoint=basepoint)
    bx, inv = _side(bf, "X")
    xm = bx.base
    dm = double(xm)
    fold = np.array([xm.key_index[k[1]] for k in dm.keys])
    bd = pullback(bx, mesh_map(dm, xm, fold))
    cert = trivialize(bd, eps, basepoint=basepoint)
    if isinstance(cert, Obstruction):
        return cert
    ids = np.array([dm.key_index[("+", xm.keys[inv[v]])] for v in cut_ids])
    g = GaugeTransform(sl, cert.gauge.frame_change[ids])
    framed = restrict(bf, sl, cut_ids)
    from .bundle import gauge as apply_gauge
    from .trivialize import edge_residuals, form_norms

    out = apply_gauge(framed, g)
    res = float(edge_residuals(out).max())
    return FrameCertificate(g, res, cert.constant_estimate, cert.curvature,
                            float(form_norms(out).max()), cert.trace)


def _cap(ext, slice_mesh, info, tag):
    """Glue the model S^p x D^q onto the outer slice of an extension."""
    lengths = slice_mesh.edge_length
    h = float(np.mean(lengths)) if len(lengths) else 1.0
    y = gen.sphere_disk(info["p"], info["q"], info.get("m", 1), info.get("mq", 1), h)
    ident = [(("A", int(ext.slice_vertices[s])), ("Y", y.key_index[tuple(k)]))
             for s, k in enumerate(slice_mesh.keys)]
    return glue_bundles([("A", ext.bundle.base, ext.bundle), ("Y", y, None)], ident, fixed=("A",),
                        meta={"capped": tag})


def transplant(b: Bundle, eps0: float = 0.05, profile: CutoffProfile | None = None, eps: float = 1.0):
    """Run the cut / frame / extend / cap pipeline on a bundle over a surgered mesh.

    Returns a TransplantResult, or an Obstruction when the cut slice cannot be
    framed (q = 2 slices are never simply connected).
    """
    m = b.base
    info = m.meta.get("surgery")
    if info is None or m.collar is None or "M_prime" not in m.regions or "X" not in m.regions:
        raise ConfigurationError("transplant needs a mesh produced by surgery (collar and regions)")
    p, q = info["p"], info["q"]
    if q == 2:
        return Obstruction("not_simply_connected", {"slice": f"S^{p} x S^1", "q": q},
                           "the cut slice S^p x S^1 is not simply connected")
    bf = flatten_collar(b)
    r0 = curvature(b).sup_norm
    factor = curvature(bf).sup_norm / r0 if r0 > 0 else 1.0
    cert = _slice_frame(bf, p, eps)
    if isinstance(cert, Obstruction):
        return cert
    if cert.form_norm > eps0:
        return Obstruction("holonomy", {"form_norm": cert.form_norm, "eps0": eps0},
                           f"slice frame form norm {cert.form_norm:.3g} exceeds eps0 {eps0:.3g}")
    col = m.collar
    spacing = float(np.min(np.abs(np.diff(col.levels))))
    sides = {}
    for name in ("M_prime", "X"):
        bs, inv = _side(bf, name)
        sv = inv[col.vertex_index[:, col.cut]]
        ext = collar_extend(bs, cert.gauge, profile, eps0, slice_vertices=sv, spacing=spacing)
        sides[name] = _cap(ext, col.slice, info, name)
    tot = _totals(b)
    t_my = _totals(sides["M_prime"])
    t_xy = _totals(sides["X"])
    integrals = {k: {"M#": tot[k], "M'uY": t_my[k], "Xu-Y": t_xy[k]} for k in tot}
    resid = max([abs(v["M#"] - v["M'uY"] - v["Xu-Y"]) for v in integrals.values()], default=0.0)
    return TransplantResult(sides["M_prime"], sides["X"], integrals, float(resid), cert, factor)


# ---------------------------------------------------------------------------
# collapse map


def collapse_map_pullback(b: Bundle, sum_mesh: Mesh) -> Bundle:
    """Pull a bundle on M1 back to M1 # M2 along the degree-one collapse map.

    Transports are copied on M1 minus the removed cell and are the identity on
    M2 minus its cell.  The handle is mapped radially onto the removed cell:
    in a tree frame of the cell boundary, the slice at handle position
    lambda (1 at M1, 0 at M2) carries exp(lambda log U) of the cell edges.
    """
    info = sum_mesh.meta.get("connected_sum")
    if info is None or "M1" not in sum_mesh.regions or sum_mesh.collar is None:
        raise ConfigurationError("collapse map needs a connected-sum mesh with labels")
    m1 = b.base
    if len(m1.top) <= info["cell1"]:
        raise ConfigurationError("bundle base does not match the first summand")
    cell = m1.top[info["cell1"]]
    keys = sum_mesh.keys
    n = sum_mesh.n_vertices
    origin = np.zeros(n, dtype=np.int64)  # 1: M1, 2: M2, 0: handle
    m1id = -np.ones(n, dtype=np.int64)
    for v, k in enumerate(keys):
        if k[0] == "M":
            origin[v] = 1 if k[1][0] == "1" else 2
            if origin[v] == 1:
                m1id[v] = m1.key_index.get(k[1][1], -1)
    if np.any((origin == 1) & (m1id < 0)):
        raise ConfigurationError("first summand keys do not match the bundle base")
    col = sum_mesh.collar
    vi = col.vertex_index
    sl = col.slice
    # slice keys are a + y: a in {(0,), (1,)} picks the end, y the point of S^(n-1)
    y_of_slice = [tuple(k[1:]) for k in sl.keys]
    ys = sorted(set(y_of_slice))
    y_index = {y: i for i, y in enumerate(ys)}
    ring1 = {}
    for s, k in enumerate(sl.keys):
        v = vi[s, -1]
        if origin[v] == 1:
            ring1[y_of_slice[s]] = m1id[v]
    if len(ring1) != len(ys):
        raise ConfigurationError("collar does not attach to the removed cell of M1")
    yv = -np.ones(n, dtype=np.int64)
    for s in range(len(sl.keys)):
        yv[vi[s]] = y_index[y_of_slice[s]]
    handle = origin == 0
    if np.any(handle & (yv < 0)):
        raise ConfigurationError("handle vertex outside the collar product structure")
    # radial coordinate from graph distance to the M1 ring
    e = sum_mesh.edges
    vert = (yv[e[:, 0]] == yv[e[:, 1]]) & (yv[e[:, 0]] >= 0)
    adj = sp.coo_matrix((np.ones(vert.sum()), (e[vert, 0], e[vert, 1])), shape=(n, n))
    ring_ids = np.array([vi[s, -1] for s in range(len(sl.keys)) if origin[vi[s, -1]] == 1])
    ring2 = np.array([vi[s, -1] for s in range(len(sl.keys)) if origin[vi[s, -1]] == 2])
    dist = shortest_path(adj, directed=False, unweighted=True, indices=ring_ids).min(axis=0)
    total = float(dist[ring2].max())
    lam = np.clip(1.0 - dist / total, 0.0, 1.0)
    lam[origin == 1] = 1.0
    lam[origin == 2] = 0.0
    # tree frame on the cell boundary (cell corners indexed by y)
    corner = np.array([ring1[y] for y in ys])
    r = b.rank
    g = np.broadcast_to(np.eye(r, dtype=complex), (len(ys), r, r)).copy()
    done = {0}
    ce = [(i, j) for i in range(len(ys)) for j in range(len(ys))
          if i < j and sum(a != c for a, c in zip(ys[i], ys[j])) == 1]
    changed = True
    while changed:
        changed = False
        for i, j in ce:
            for a, c in ((i, j), (j, i)):
                if a in done and c not in done:
                    ei, si = m1.edge_lookup([corner[a]], [corner[c]])
                    g[c] = g[a] @ dagger(oriented(b.transport[ei], si)[0])
                    done.add(c)
                    changed = True
    if len(done) != len(ys):
        raise ConfigurationError("cell boundary is not connected")
    tr = np.broadcast_to(np.eye(r, dtype=complex), (sum_mesh.n_edges, r, r)).copy()
    a, c = e[:, 0], e[:, 1]
    both1 = (origin[a] == 1) & (origin[c] == 1)
    ei, si = m1.edge_lookup(m1id[a[both1]], m1id[c[both1]])
    tr[both1] = oriented(b.transport[ei], si)
    for i in np.flatnonzero(~both1):
        va, vc = a[i], c[i]
        if origin[va] == 2 or origin[vc] == 2:
            continue
        ya, yc = yv[va], yv[vc]
        if ya == yc:
            # vertical: frame change where the handle meets the M1 ring
            if origin[va] == 1:
                tr[i] = g[ya]
            elif origin[vc] == 1:
                tr[i] = dagger(g[yc])
            continue
        la = lam[va]
        ej, sj = m1.edge_lookup([corner[ya]], [corner[yc]])
        u = oriented(b.transport[ej], sj)[0]
        w = logu(g[yc] @ u @ dagger(g[ya]))
        tr[i] = expu(la * w)
    return Bundle(sum_mesh, tr)


# ---------------------------------------------------------------------------
# threshold scans


@dataclass(frozen=True, eq=False)
class ThresholdScan:
    delta_star: float
    rows: list  # (label, sup_norm, totals)
    ok: bool  # every bundle below delta_star has vanishing Chern numbers


def default_corpus(m: Mesh, deltas=(0.005, 0.01, 0.02, 0.05, 0.1), fluxes=(1, -1, 2), seed=0):
    out = []
    rng = np.random.default_rng(seed)
    for d in deltas:
        for r in (1, 2):
            out.append((f"flat+{d}(r={r})", perturbed_flat(m, d, r, int(rng.integers(2 ** 32)))))
    if m.dim == 2:
        for k in fluxes:
            out.append((f"monopole({k})", monopole_bundle(m, k)))
    return out


def threshold_scan(m: Mesh, corpus=None, tol=1e-6) -> ThresholdScan:
    """delta* = smallest curvature among corpus bundles with a nonzero Chern number."""
    corpus = default_corpus(m) if corpus is None else corpus
    rows = []
    for label, bb in corpus:
        rows.append((label, curvature(bb).sup_norm, _totals(bb)))
    nonzero = [s for _, s, t in rows if any(abs(v) > tol for v in t.values())]
    dstar = min(nonzero) if nonzero else float("inf")
    ok = all(all(abs(v) <= tol for v in t.values()) for _, s, t in rows if s < dstar)
    return ThresholdScan(float(dstar), rows, ok)
