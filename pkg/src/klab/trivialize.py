"""Near-identity global frames for small-curvature bundles, and collar extension.

A frame is a gauge transform; its quality is the largest edge residual
``|transport'(e) - I|`` after applying it.  Frames are built from a
breadth-first parallel-transport tree followed by Lie-algebra relaxation.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import BranchCutError, ConfigurationError, PreconditionError
from .bundle import Bundle, GaugeTransform, curvature, gauge, identity_gauge, oriented, perturbed_flat
from .chern import MONOMIALS, chern_densities
from .linalg import antihermitian_part, dagger, expu, logu, opnorm
from .mesh import Mesh
from .mesh.rewrite import glue, slab

OBJECTIVE_FLOOR = 1e-26  # sum |log|^2 at roundoff level
OBSTRUCTION_KINDS = ("nonzero_chern", "holonomy", "not_simply_connected", "branch_cut")


@dataclass(frozen=True)
class Obstruction:
    kind: str
    witness: dict
    message: str = ""

    def __post_init__(self):
        if self.kind not in OBSTRUCTION_KINDS:
            raise ValueError(f"unknown obstruction kind {self.kind!r}")

    def as_dict(self):
        return {"obstruction": self.kind, "witness": self.witness, "message": self.message}


@dataclass(frozen=True, eq=False)
class RelaxTrace:
    objective: list
    residual: list
    iterations: int
    converged: bool


@dataclass(frozen=True, eq=False)
class FrameCertificate:
    gauge: GaugeTransform = field(repr=False)
    residual: float
    constant_estimate: float
    curvature: float
    form_norm: float  # max |log transport'(e)| / length(e)
    trace: RelaxTrace | None = field(default=None, repr=False)

    def as_dict(self):
        return {"residual": self.residual, "constant_estimate": self.constant_estimate,
                "curvature": self.curvature, "form_norm": self.form_norm,
                "iterations": self.trace.iterations if self.trace else 0}


def edge_residuals(b: Bundle) -> np.ndarray:
    return opnorm(b.transport - np.eye(b.rank))


def form_norms(b: Bundle) -> np.ndarray:
    """Per-edge |log transport| / length: the connection 1-form in this frame."""
    lg = logu(b.transport, labels=np.arange(b.base.n_edges), kind="edge")
    return opnorm(lg) / b.base.edge_length


def compose(g2: GaugeTransform, g1: GaugeTransform) -> GaugeTransform:
    """Gauge applying g1 first, then g2."""
    return GaugeTransform(g1.base, g2.frame_change @ g1.frame_change)


# ---------------------------------------------------------------------------
# tree gauge


def _adjacency(m: Mesh):
    e = m.edges
    n = m.n_vertices
    nbrs = [[] for _ in range(n)]
    for i, (a, b) in enumerate(e):
        nbrs[a].append((b, i, 1))
        nbrs[b].append((a, i, -1))
    for lst in nbrs:
        lst.sort()
    return nbrs


def bfs_tree(m: Mesh, basepoint=0):
    """Parent edge per vertex of a BFS tree (ties to the lowest index); roots get -1."""
    n = m.n_vertices
    if not 0 <= basepoint < max(n, 1):
        raise ConfigurationError(f"basepoint {basepoint} is not a vertex")
    nbrs = _adjacency(m)
    parent = -np.ones(n, dtype=np.int64)
    parent_edge = -np.ones(n, dtype=np.int64)
    parent_sign = np.zeros(n, dtype=np.int64)
    seen = np.zeros(n, bool)
    order = []
    roots = [basepoint] + [v for v in range(n) if v != basepoint]
    for r in roots:
        if seen[r]:
            continue
        seen[r] = True
        queue = deque([r])
        while queue:
            v = queue.popleft()
            order.append(v)
            for w, ei, s in nbrs[v]:
                if not seen[w]:
                    seen[w] = True
                    parent[w], parent_edge[w], parent_sign[w] = v, ei, s
                    queue.append(w)
    return np.array(order), parent, parent_edge, parent_sign


def tree_gauge(b: Bundle, basepoint=0) -> GaugeTransform:
    """Gauge making every BFS-tree edge transport the identity."""
    m = b.base
    order, parent, pe, ps = bfs_tree(m, basepoint)
    g = np.broadcast_to(np.eye(b.rank, dtype=complex), (m.n_vertices, b.rank, b.rank)).copy()
    for w in order:
        v = parent[w]
        if v < 0:
            continue
        u = b.transport[pe[w]] if ps[w] > 0 else dagger(b.transport[pe[w]])
        g[w] = g[v] @ dagger(u)
    return GaugeTransform(m, g)


def tree_edges(m: Mesh, basepoint=0) -> np.ndarray:
    _, _, pe, _ = bfs_tree(m, basepoint)
    return np.sort(pe[pe >= 0])


# ---------------------------------------------------------------------------
# relaxation


def _coloring(m: Mesh):
    nbrs = _adjacency(m)
    color = -np.ones(m.n_vertices, dtype=np.int64)
    for v in range(m.n_vertices):
        used = {color[w] for w, _, _ in nbrs[v]}
        c = 0
        while c in used:
            c += 1
        color[v] = c
    return color


def _objective_terms(t):
    lg = logu(t, labels=np.arange(len(t)), kind="edge")
    return lg, np.real(np.einsum("eij,eij->e", lg, lg.conj()))


def _laplacian_solver(m: Mesh):
    """Solve the vertex Laplacian with one vertex pinned per connected component."""
    from scipy.sparse.csgraph import connected_components
    from scipy.sparse.linalg import splu

    e, n = m.edges, m.n_vertices
    adj = sp.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n)).tocsr()
    adj = adj + adj.T
    lap = sp.diags(np.asarray(adj.sum(axis=1)).ravel()) - adj
    _, comp = connected_components(adj, directed=False)
    pinned = np.zeros(n, bool)
    pinned[np.unique(comp, return_index=True)[1]] = True
    keep = sp.diags((~pinned).astype(float))
    lu = splu((keep @ lap @ keep + sp.diags(pinned.astype(float))).tocsc())

    def solve(rhs):
        rhs = np.where(pinned[:, None], 0.0, rhs)
        return lu.solve(rhs.real) + 1j * lu.solve(rhs.imag)

    return solve


def _divergence(e, lg, n):
    acc = np.zeros((n,) + lg.shape[1:], complex)
    np.add.at(acc, e[:, 0], lg)
    np.add.at(acc, e[:, 1], -lg)
    return acc


def _apply_moves(t, h, e):
    return h[e[:, 1]] @ t @ dagger(h[e[:, 0]])


def relax_gauge(b: Bundle, max_iters=500, target_residual=0.0, damping=0.5, tol=1e-12, global_steps=True):
    """Landau-type gauge fixing; returns ``(GaugeTransform, RelaxTrace)``.

    Global phase: the linearised optimum of sum |log transport|^2 solves a
    vertex Laplacian for the Lie-algebra move; the step is halved until the
    objective drops.  Local phase: checkerboard averaging where each vertex
    of one colour moves by exp(damping * mean of the logs of its outgoing
    transports), skipped if it would raise the local objective.  The total
    objective never increases.
    """
    m = b.base
    r = b.rank
    e = m.edges
    n = m.n_vertices
    g = np.broadcast_to(np.eye(r, dtype=complex), (n, r, r)).copy()
    t = b.transport.copy()
    lg, obj = _objective_terms(t)
    res = opnorm(t - np.eye(r)) if len(t) else np.zeros(0)
    trace_obj = [float(obj.sum())]
    trace_res = [float(res.max()) if len(res) else 0.0]
    if trace_res[0] <= target_residual or trace_obj[0] < OBJECTIVE_FLOOR:
        return GaugeTransform(m, g), RelaxTrace(trace_obj, trace_res, 0, True)
    it = 0
    converged = False

    def record():
        res = opnorm(t - np.eye(r))
        trace_obj.append(float(obj.sum()))
        trace_res.append(float(res.max()))
        if trace_res[-1] <= target_residual:
            return "converged"
        if trace_obj[-1] < OBJECTIVE_FLOOR or trace_obj[-2] - trace_obj[-1] <= tol * trace_obj[-2]:
            return "stalled"
        return None

    status = None
    if global_steps:
        solve = _laplacian_solver(m)
        while it < max_iters and status is None:
            x = solve(_divergence(e, lg, n).reshape(n, r * r)).reshape(n, r, r)
            x = antihermitian_part(x)
            step = 1.0
            while step >= 2.0 ** -8:
                h = expu(step * x)
                tn = _apply_moves(t, h, e)
                lgn, objn = _objective_terms(tn)
                if objn.sum() < obj.sum():
                    break
                step /= 2
            else:
                break
            it += 1
            t, lg, obj = tn, lgn, objn
            g = h @ g
            status = record()
    if status is None:
        color = _coloring(m)
        ncol = int(color.max()) + 1
        deg = np.bincount(e.ravel(), minlength=n).astype(float)
        while it < max_iters and status is None:
            it += 1
            for c in range(ncol):
                acc = _divergence(e, lg, n)
                mov = color == c
                x = np.zeros((n, r, r), complex)
                x[mov] = damping * acc[mov] / np.maximum(deg[mov], 1)[:, None, None]
                h = expu(x)
                touched = mov[e[:, 0]] | mov[e[:, 1]]
                tn = t.copy()
                tn[touched] = _apply_moves(t[touched], h, e[touched])
                lgn = lg.copy()
                objn = obj.copy()
                lgn[touched], objn[touched] = _objective_terms(tn[touched])
                vert = np.where(mov[e[:, 0]], e[:, 0], e[:, 1])
                before = np.bincount(vert[touched], weights=obj[touched], minlength=n)
                after = np.bincount(vert[touched], weights=objn[touched], minlength=n)
                ok = mov & (after <= before)
                accept = touched & ok[vert]
                t[accept], lg[accept], obj[accept] = tn[accept], lgn[accept], objn[accept]
                g[ok] = h[ok] @ g[ok]
            status = record()
    converged = status == "converged"
    return GaugeTransform(m, g), RelaxTrace(trace_obj, trace_res, it, converged)


# ---------------------------------------------------------------------------
# topology checks


def homology_generators(m: Mesh, basepoint=0):
    """Non-tree edges whose fundamental cycles generate H_1 over the reals."""
    from scipy.linalg import null_space, qr

    te = set(tree_edges(m, basepoint).tolist())
    nt = np.array([i for i in range(m.n_edges) if i not in te], dtype=np.int64)
    if len(nt) == 0:
        return nt
    if m.dim < 2 or m.n_plaquettes == 0:
        return nt
    pe, ps = m.plaquette_cycles
    col = -np.ones(m.n_edges, dtype=np.int64)
    col[nt] = np.arange(len(nt))
    rows = np.repeat(np.arange(m.n_plaquettes), 4)
    cols = col[pe.ravel()]
    keep = cols >= 0
    bmat = sp.csr_matrix((ps.ravel()[keep].astype(float), (rows[keep], cols[keep])),
                         shape=(m.n_plaquettes, len(nt)))
    b1 = m.betti_numbers()[1]
    if b1 == 0:
        return np.zeros(0, dtype=np.int64)
    z = null_space(bmat.toarray())
    _, _, piv = qr(z.T, pivoting=True, mode="economic")
    return nt[np.sort(piv[: z.shape[1]])]


# ---------------------------------------------------------------------------
# trivialization


def trivialize(b: Bundle, eps: float, basepoint=0, max_iters=2000, chern_tol=1e-6):
    """Global frame with every edge residual <= eps, or an Obstruction."""
    if not eps > 0:
        raise ConfigurationError(f"eps must be positive, got {eps}")
    m = b.base
    try:
        curv = curvature(b)
    except BranchCutError as exc:
        return Obstruction("branch_cut", {"cell": exc.cell, "kind": exc.kind}, str(exc))
    if m.dim in MONOMIALS and m.is_closed():
        rep = chern_densities(b)
        for mono, val in rep.totals.items():
            if abs(val) > chern_tol:
                return Obstruction("nonzero_chern", {"monomial": mono, "value": val},
                                   f"{mono} = {val:.6g} cannot be trivialized")
    g0 = tree_gauge(b, basepoint)
    b0 = gauge(b, g0)
    gens = homology_generators(m, basepoint)
    if len(gens):
        hol = opnorm(b0.transport[gens] - np.eye(b.rank))
        worst = int(np.argmax(hol))
        if hol[worst] > eps:
            return Obstruction("holonomy", {"loop_edge": int(gens[worst]), "value": float(hol[worst])},
                               "non-contractible loop with nontrivial holonomy")
    g1, trace = relax_gauge(b0, max_iters=max_iters, target_residual=0.0)
    gt = compose(g1, g0)
    out = gauge(b, gt)
    res = edge_residuals(out)
    worst = int(np.argmax(res)) if len(res) else 0
    resid = float(res[worst]) if len(res) else 0.0
    if resid > eps:
        kind = "not_simply_connected" if len(gens) else "holonomy"
        return Obstruction(kind, {"edge": worst, "value": resid},
                           f"relaxed frame residual {resid:.3g} exceeds eps {eps:.3g}")
    if curv.sup_norm > 0:
        const = resid / curv.sup_norm
    else:
        const = 0.0 if resid == 0 else float("inf")
    fn = form_norms(out)
    return FrameCertificate(gt, resid, const, curv.sup_norm, float(fn.max()) if len(fn) else 0.0, trace)


_CALIBRATION: dict = {}


def calibrate(m: Mesh, rank=1, samples=20, delta=0.01, seed=0, cache=True):
    """C_mesh: max constant_estimate over a seeded corpus of near-flat bundles."""
    key = (m.hash, rank, samples, delta, seed)
    if cache and key in _CALIBRATION:
        return _CALIBRATION[key]
    rng = np.random.default_rng(seed)
    consts = []
    for s in rng.integers(2 ** 32, size=samples):
        b = perturbed_flat(m, delta, rank, int(s))
        cert = trivialize(b, eps=1.0)
        if isinstance(cert, Obstruction):
            raise PreconditionError(f"calibration input was obstructed: {cert.message}")
        consts.append(cert.constant_estimate)
    c = float(max(consts))
    if cache:
        _CALIBRATION[key] = c
    return c


# ---------------------------------------------------------------------------
# collars


@dataclass(frozen=True)
class CutoffProfile:
    """Samples of chi on the collar coordinate: 1 for t < 2, 0 for t > 4, |slope| <= 1."""

    t: tuple
    chi: tuple
    slope_bound: float = 1.0

    def __post_init__(self):
        t = np.asarray(self.t, float)
        c = np.asarray(self.chi, float)
        if t.shape != c.shape or len(t) < 2 or np.any(np.diff(t) <= 0):
            raise ConfigurationError("profile needs increasing sample points with one value each")
        if np.any(np.abs(c[t < 2] - 1) > 0) or np.any(np.abs(c[t > 4]) > 0):
            raise ConfigurationError("profile must be 1 for t < 2 and 0 for t > 4")
        slope = -np.diff(c) / np.diff(t)
        if np.any(slope < -1e-15) or np.any(slope > self.slope_bound + 1e-15):
            raise ConfigurationError(f"profile slope outside [0, {self.slope_bound}] (max {slope.max():.3g})")
        if np.any(c < 0) or np.any(c > 1):
            raise ConfigurationError("profile values must lie in [0, 1]")

    def __call__(self, s):
        return np.interp(s, self.t, self.chi)

    @classmethod
    def linear(cls, lo=2.0, hi=4.0):
        return cls((lo - 1e-9 if lo > 0 else -1.0, lo, hi, hi + 2.0), (1.0, 1.0, 0.0, 0.0))


def default_profile():
    return CutoffProfile((-2.0, 2.0, 4.0, 6.0), (1.0, 1.0, 0.0, 0.0))


def _level_map(levels):
    """Lipschitz-2 map of collar levels: |t| < T/2 -> 0, else stretched onto [0, T]."""
    lv = np.asarray(levels, float)
    T = np.max(np.abs(lv))
    target = np.where(np.abs(lv) < T / 2, 0.0, np.sign(lv) * 2 * (np.abs(lv) - T / 2))
    return np.array([int(np.argmin(np.abs(lv - x))) for x in target])


def flatten_map(m: Mesh):
    """MeshMap M -> M collapsing the collar middle onto the cut level."""
    from .bundle import mesh_map

    col = m.collar
    if col is None:
        raise ConfigurationError("mesh has no collar")
    if col.n_levels < 5:
        raise ConfigurationError("flattening needs a collar with at least 5 levels")
    phi = _level_map(col.levels)
    vi = col.vertex_index
    vmap = np.arange(m.n_vertices)
    vmap[vi] = vi[:, phi]
    paths = {}
    e = m.edges
    level_of = -np.ones(m.n_vertices, dtype=np.int64)
    slice_of = -np.ones(m.n_vertices, dtype=np.int64)
    level_of[vi] = np.arange(col.n_levels)[None, :]
    slice_of[vi] = np.arange(len(vi))[:, None]
    for i, (a, b) in enumerate(e):
        la, lb = level_of[a], level_of[b]
        if la < 0 or lb < 0 or slice_of[a] != slice_of[b]:
            continue
        s = slice_of[a]
        pa, pb = phi[la], phi[lb]
        if abs(pa - pb) <= 1:
            continue
        step = 1 if pb > pa else -1
        seq = vi[s, pa:pb + step:step]
        te, ts = m.edge_lookup(seq[:-1], seq[1:])
        paths[i] = list(zip(te.tolist(), ts.tolist()))
    return mesh_map(m, m, vmap, paths, degree=1)


def flatten_collar(b: Bundle) -> Bundle:
    """Pull back along the collar-flattening map (translation invariant for |t| < T/2)."""
    from .bundle import pullback

    out = pullback(b, flatten_map(b.base))
    return Bundle(b.base, out.transport, b.flat_regions)


@dataclass(frozen=True, eq=False)
class Extension:
    bundle: Bundle
    extension_cells: np.ndarray  # top cells of the added layers
    flat_cells: np.ndarray  # added top cells with profile coordinate > 4
    slice_vertices: np.ndarray  # merged ids of the outermost slice
    slice_mesh: Mesh
    levels: np.ndarray


def collar_extend(b: Bundle, frame: GaugeTransform, profile: CutoffProfile | None = None,
                  eps0: float | None = None, slice_vertices=None, spacing=None, start=2.0, stop=6.0):
    """Attach layers ``slice x (start, stop]`` beyond the boundary slice.

    ``frame`` is a gauge on the slice mesh (``b.base.collar.slice`` unless
    ``slice_vertices`` names the boundary vertices explicitly) making slice
    transports near the identity.  Layer transports are exp(chi(t) w0) with w0
    the slice logs in that frame; the frame change sits on the first vertical
    edges, so layers with chi = 0 are exactly the identity.
    """
    profile = profile or default_profile()
    m = b.base
    sl = frame.base
    if slice_vertices is None:
        if m.collar is None:
            raise PreconditionError("no collar and no slice vertices given")
        slice_vertices = m.collar.vertex_index[:, -1]
    sv = np.asarray(slice_vertices)
    if len(sv) != sl.n_vertices:
        raise ConfigurationError("frame does not match the boundary slice")
    e_sl, s_sl = m.edge_lookup(sv[sl.edges[:, 0]], sv[sl.edges[:, 1]])
    u = oriented(b.transport[e_sl], s_sl)
    g = frame.frame_change
    u0 = g[sl.edges[:, 1]] @ u @ dagger(g[sl.edges[:, 0]])
    w0 = logu(u0, labels=np.arange(len(u0)), kind="slice edge")
    if eps0 is not None:
        fn = float(np.max(opnorm(w0) / sl.edge_length)) if len(w0) else 0.0
        if fn > eps0 * (1 + 1e-12):
            raise PreconditionError(f"slice frame has form norm {fn:.4g} > eps0 {eps0:.4g}")
    if spacing is None:
        if m.collar is not None and m.collar.n_levels > 1:
            spacing = float(np.min(np.abs(np.diff(m.collar.levels))))
        else:
            spacing = 1.0
    n_layers = max(int(round((stop - start) / spacing)), 1)
    tlev = start + spacing * np.arange(n_layers + 1)
    ext = slab(sl, tlev, tag="E")
    glued = glue([("M", m, None), ("E", ext, None)],
                 [(("M", int(sv[i])), ("E", int(ext.collar.vertex_index[i, 0]))) for i in range(len(sv))],
                 fixed=("M",), meta=dict(m.meta))
    out = glued.mesh
    regions = dict(m.regions)
    regions = {k: glued.cell_map["M"][np.asarray(v, int)] for k, v in regions.items()}
    ext_cells = glued.cell_map["E"]
    regions["extension"] = ext_cells
    chi = profile(tlev)
    # transports on the new mesh
    vm, ve = glued.vmap["M"], glued.vmap["E"]
    r = b.rank
    tr = np.broadcast_to(np.eye(r, dtype=complex), (out.n_edges, r, r)).copy()
    oe, os_ = out.edge_lookup(vm[m.edges[:, 0]], vm[m.edges[:, 1]])
    tr[oe] = oriented(b.transport, os_)
    ev = ext.collar.vertex_index
    for l in range(1, n_layers + 1):
        a, c = ve[ev[sl.edges[:, 0], l]], ve[ev[sl.edges[:, 1], l]]
        ee, es = out.edge_lookup(a, c)
        if chi[l] != 0:
            tr[ee] = oriented(expu(chi[l] * w0), es)
    # frame change on the first vertical edges: fibre of the slice -> frame fibre
    a, c = ve[ev[:, 0]], ve[ev[:, 1]]
    ee, es = out.edge_lookup(a, c)
    tr[ee] = oriented(g, es)
    # slab cells are listed slice cell by slice cell, layers innermost
    layer = np.tile(np.arange(n_layers), len(ext.top) // n_layers)
    flat_cells = ext_cells[tlev[layer] >= 4.0 - 1e-12]
    regions["extension_flat"] = flat_cells
    nb = Bundle(out.with_(regions=regions), tr, b.flat_regions)
    return Extension(nb, ext_cells, flat_cells, ve[ev[:, -1]], sl, tlev)
