"""Combinatorial rewrites: gluing, surgery, connected sum, doubling, coverings."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import ConfigurationError, GluingError, PlanError
from .complex import Collar, Mesh, build_cells, mesh_from_top_cells, orient_cells
from . import generators as gen


def scale_metric(m: Mesh, c: float) -> Mesh:
    """Multiply lengths by c (areas by c^2, k-volumes by c^k)."""
    if not c > 0:
        raise ConfigurationError(f"metric scale factor must be positive, got {c}")
    collar = m.collar
    if collar is not None:
        collar = Collar(scale_metric(collar.slice, c), collar.levels, collar.vertex_index, collar.cut)
    return m.with_(metric_scale=m.metric_scale * c, collar=collar)


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, i):
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # keep the smaller id (earlier piece) as representative
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


@dataclass
class Glued:
    mesh: Mesh
    vmap: dict  # tag -> (n_piece_vertices,) merged vertex id
    cell_map: dict  # tag -> (n_piece_top,) merged top-cell id or -1
    flipped: np.ndarray = field(default=None)


def glue(pieces, identify=(), measure_priority=None, fixed=(), collar_from=None, meta=None):
    """Glue meshes along identified vertices.

    ``pieces`` is a list of ``(tag, mesh, keep_mask_or_None)``; ``identify`` a
    list of ``((tag, v), (tag, w))`` vertex pairs.  Lower-dimensional cell
    measures are taken from the first piece in ``measure_priority`` containing
    the cell.  Cells of pieces listed in ``fixed`` keep their orientation.
    """
    tags = [t for t, _, _ in pieces]
    if len(set(tags)) != len(tags):
        raise ConfigurationError("piece tags must be unique")
    dims = {m.dim for _, m, _ in pieces}
    if len(dims) != 1:
        raise GluingError(f"pieces have different dimensions {dims}")
    dim = dims.pop()
    offset = {}
    total = 0
    for tag, m, _ in pieces:
        offset[tag] = total
        total += m.n_vertices
    uf = _UnionFind(total)
    for (ta, va), (tb, vb) in identify:
        uf.union(offset[ta] + int(va), offset[tb] + int(vb))
    # keep only vertices used by kept cells
    tops, owners, fixed_mask, cell_maps = [], [], [], {}
    for tag, m, keep in pieces:
        keep = np.ones(len(m.top), bool) if keep is None else np.asarray(keep, bool)
        t = m.top[keep] + offset[tag]
        tops.append(t)
        owners.append(np.full(len(t), tags.index(tag)))
        fixed_mask.append(np.full(len(t), tag in fixed))
        cm = np.full(len(m.top), -1)
        start = sum(len(x) for x in tops[:-1])
        cm[keep] = start + np.arange(keep.sum())
        cell_maps[tag] = cm
    top = np.concatenate(tops)
    rep = np.array([uf.find(i) for i in range(total)])
    top = rep[top]
    used = np.unique(top)
    new_id = -np.ones(total, dtype=np.int64)
    new_id[used] = np.arange(len(used))
    top = new_id[top]
    keys = []
    for g in used:
        for tag, m, _ in pieces:
            o = offset[tag]
            if o <= g < o + m.n_vertices:
                keys.append((tag, m.keys[g - o]))
                break
    vmap = {tag: new_id[rep[offset[tag] + np.arange(m.n_vertices)]] for tag, m, _ in pieces}
    if dim > 0:
        top, flipped = orient_cells(top, dim, fixed=np.concatenate(fixed_mask))
    else:
        flipped = np.zeros(len(top), bool)
    cells, _ = build_cells(top, dim) if dim > 0 else ({}, {})
    # per merged vertex: local ids in each piece
    back = {tag: {} for tag in tags}
    for tag, m, _ in pieces:
        for lv, gv in enumerate(vmap[tag]):
            if gv >= 0:
                back[tag][int(gv)] = lv
    prio = measure_priority or tags
    pmesh = {tag: m for tag, m, _ in pieces}
    base = {}
    for k in range(1, dim + 1):
        vals = np.empty(len(cells[k]))
        for i, c in enumerate(cells[k]):
            for tag in prio:
                b = back[tag]
                if all(int(v) in b for v in c):
                    pm = pmesh[tag]
                    fi = pm.face_index(k, [b[int(v)] for v in c])
                    if fi >= 0:
                        vals[i] = pm.measure(k)[fi]
                        break
            else:
                raise GluingError(f"{k}-cell {c} is not a cell of any piece")
        base[k] = vals
    regions = {}
    for tag, m, keep in pieces:
        cm = cell_maps[tag]
        regions[tag] = cm[cm >= 0]
        for name, idx in m.regions.items():
            mapped = cm[np.asarray(idx, dtype=int)]
            regions[f"{tag}:{name}"] = mapped[mapped >= 0]
    collar = None
    if collar_from is not None:
        c = pmesh[collar_from].collar
        collar = Collar(c.slice, c.levels, vmap[collar_from][c.vertex_index], c.cut)
    mesh = Mesh(dim, tuple(keys), cells, base, 1.0, regions, collar, meta or {})
    return Glued(mesh, vmap, cell_maps, flipped)


def disjoint_union(m1: Mesh, m2: Mesh) -> Mesh:
    return glue([("1", m1, None), ("2", m2, None)], fixed=("1", "2")).mesh


def submesh(m: Mesh, top_cells, tag="S"):
    """Restriction to a set of top cells; returns ``(mesh, parent_vertex_ids)``."""
    keep = np.zeros(len(m.top), bool)
    keep[np.asarray(top_cells, dtype=int)] = True
    g = glue([(tag, m, keep)], fixed=(tag,))
    parent = -np.ones(g.mesh.n_vertices, dtype=np.int64)
    ok = g.vmap[tag] >= 0
    parent[g.vmap[tag][ok]] = np.flatnonzero(ok)
    return g.mesh, parent


# ---------------------------------------------------------------------------
# surgery


@dataclass
class SurgeryPlan:
    """Embedded S^p x D^q region and handle resolution.

    ``embedding`` maps ``a + d`` (a: vertex key of the cube-boundary p-sphere
    of resolution ``m``; d: vertex key of the cube grid [0, mq]^q) to a mesh
    vertex id.  ``collar_levels`` product layers span t in [-4, 4].
    """

    p: int
    q: int
    m: int
    mq: int
    embedding: dict
    collar_levels: int = 8
    handle_m: int | None = None

    def region_model(self, h=1.0, hq=None):
        return gen.sphere_disk(self.p, self.q, self.m, self.mq, h, hq)

    def handle(self, h=1.0, hq=None):
        return gen.handle(self.p, self.q, self.m, self.mq, self.collar_levels, 4.0, -4.0, h, hq)

    def to_json(self):
        return {
            "p": self.p, "q": self.q, "m": self.m, "mq": self.mq,
            "collar_levels": self.collar_levels,
            "embedding": [[list(k), int(v)] for k, v in self.embedding.items()],
        }

    @classmethod
    def from_json(cls, d):
        emb = {tuple(k): int(v) for k, v in d["embedding"]}
        return cls(d["p"], d["q"], d["m"], d["mq"], emb, d.get("collar_levels", 8))


def _region_cells(m: Mesh, plan: SurgeryPlan):
    if plan.p + plan.q != m.dim:
        raise PlanError(f"p + q = {plan.p + plan.q} does not match mesh dimension {m.dim}")
    model = plan.region_model()
    try:
        ids = np.array([plan.embedding[k] for k in model.keys])
    except KeyError as exc:
        raise PlanError(f"embedding misses region vertex {exc}") from exc
    if len(set(ids.tolist())) != len(ids):
        raise PlanError("region embedding is not injective")
    cells = []
    for c in model.top:
        fi = m.face_index(m.dim, ids[c])
        if fi < 0:
            raise PlanError("region cell does not map onto a top cell of the mesh")
        cells.append(fi)
    return np.array(cells), model, ids


def _boundary_spacing(m, plan, ids, model):
    """Mean mesh edge length on the region boundary along the S^p and S^(q-1) factors."""
    hs, hq = [], []
    ar = plan.p + 1
    e = model.edges
    mq = plan.mq
    for a, b in e:
        ka, kb = model.keys[a], model.keys[b]
        d = ka[ar:]
        if not any(x in (0, mq) for x in d) and plan.q > 0:
            continue
        if not any(x in (0, mq) for x in kb[ar:]) and plan.q > 0:
            continue
        ei, _ = m.edge_lookup([ids[a]], [ids[b]])
        length = m.edge_length[ei[0]]
        (hs if ka[:ar] != kb[:ar] else hq).append(length)
    h = float(np.mean(hs)) if hs else 1.0
    hqv = float(np.mean(hq)) if hq else h
    return h, hqv


def surgery(m: Mesh, plan: SurgeryPlan, fixed_tags=None) -> Mesh:
    """Replace the embedded S^p x D^q by D^(p+1) x S^(q-1) with a product collar.

    The result carries regions ``M_prime`` (complement plus collar t <= 0),
    ``X`` (collar t >= 0 plus handle core), ``collar`` and ``core``; its collar
    is cut at t = 0.  The metric on the collar is the canonical product metric
    (the region boundary is re-measured with it).
    """
    region, model, ids = _region_cells(m, plan)
    h, hq = _boundary_spacing(m, plan, ids, model)
    H = plan.handle(h, hq)
    ring = H.collar.vertex_index[:, -1]
    identify = []
    for s, key in enumerate(H.collar.slice.keys):
        # slice key = a + y with y a boundary vertex of the q-grid
        identify.append((("H", ring[s]), ("M", plan.embedding[tuple(key)])))
    keep = np.ones(len(m.top), bool)
    keep[region] = False
    try:
        g = glue([("M", m, keep), ("H", H, None)], identify, measure_priority=["H", "M"],
                 fixed=fixed_tags or ("M",), collar_from="H",
                 meta={"surgery": {"p": plan.p, "q": plan.q}})
    except GluingError as exc:
        raise PlanError(f"surgery gluing failed: {exc}") from exc
    out = g.mesh
    col = out.collar
    L = col.n_levels - 1
    cut = int(np.argmin(np.abs(col.levels)))
    level_of = -np.ones(out.n_vertices, dtype=int)
    level_of[col.vertex_index] = np.arange(col.n_levels)[None, :].repeat(len(col.vertex_index), 0)
    hcells = g.cell_map["H"]
    hcells = hcells[hcells >= 0]
    lev = level_of[out.top[hcells]]
    in_collar = np.all(lev >= 0, axis=1)
    collar_cells = hcells[in_collar]
    core_cells = hcells[~in_collar]
    t_max = col.levels[lev[in_collar]].max(axis=1)
    mprime_collar = collar_cells[t_max <= 0]
    x_collar = collar_cells[t_max > 0]
    regions = {k: v for k, v in out.regions.items() if k.startswith("M:")}
    regions["M_prime"] = np.sort(np.concatenate([out.regions["M"], mprime_collar]))
    regions["X"] = np.sort(np.concatenate([x_collar, core_cells]))
    regions["collar"] = np.sort(collar_cells)
    regions["core"] = np.sort(core_cells)
    regions["all"] = np.arange(len(out.top))
    meta = {"surgery": {"p": plan.p, "q": plan.q, "m": plan.m, "mq": plan.mq, "levels": L}}
    return out.with_(regions=regions, collar=Collar(col.slice, col.levels, col.vertex_index, cut), meta=meta)


def connected_sum(m1: Mesh, m2: Mesh, cell1: int, cell2: int, collar_levels=8) -> Mesh:
    """M1 # M2 through a cylinder collar, as 0-surgery on M1 + M2.

    Both summands keep their orientation; regions ``M1`` and ``M2`` hold the
    surviving cells of each summand.
    """
    if m1.dim != m2.dim or m1.dim < 1:
        raise GluingError("connected sum needs two meshes of the same positive dimension")
    n = m1.dim
    for mm, c in ((m1, cell1), (m2, cell2)):
        if not 0 <= c < len(mm.top):
            raise GluingError(f"cell {c} is not a top cell")
    if not (m1.is_closed() and m2.is_closed()):
        raise GluingError("connected sum needs closed summands")
    g = glue([("1", m1, None), ("2", m2, None)], fixed=("1", "2"))
    u = g.mesh
    c1 = g.vmap["1"][m1.top[cell1]]
    c2 = g.vmap["2"][m2.top[cell2]]
    last = None
    for reflect in (True, False):
        emb = {}
        for b in range(1 << n):
            d = tuple(b >> i & 1 for i in range(n))
            emb[(0,) + d] = int(c1[b])
            emb[(1,) + d] = int(c2[b ^ 1 if reflect else b])
        plan = SurgeryPlan(0, n, 1, 1, emb, collar_levels)
        try:
            out = surgery(u, plan, fixed_tags=("M",))
        except PlanError as exc:
            last = exc
            continue
        regions = dict(out.regions)
        regions["M1"] = regions.pop("M:1")
        regions["M2"] = regions.pop("M:2")
        meta = dict(out.meta)
        meta["connected_sum"] = {"cell1": int(cell1), "cell2": int(cell2), "plan": plan.to_json()}
        return out.with_(regions=regions, meta=meta)
    raise GluingError(f"no orientation-compatible gluing: {last}")


def double(m: Mesh) -> Mesh:
    """m glued to its orientation-reversed copy along the boundary.

    Regions ``+`` and ``-`` hold the two copies; ``meta["involution"]`` is the
    vertex permutation swapping them.
    """
    bverts = m.boundary_vertices()
    if len(bverts) == 0:
        raise ConfigurationError("double needs a mesh with nonempty boundary")
    identify = [(("+", v), ("-", v)) for v in bverts]
    g = glue([("+", m, None), ("-", m, None)], identify, fixed=("+",))
    out = g.mesh
    inv = np.arange(out.n_vertices)
    inv[g.vmap["+"]] = g.vmap["-"]
    inv[g.vmap["-"]] = g.vmap["+"]
    collar = None
    if m.collar is not None:
        c = m.collar
        bset = set(bverts.tolist())
        if set(c.vertex_index[:, -1].tolist()) <= bset:
            vi, lv = c.vertex_index, c.levels
        elif set(c.vertex_index[:, 0].tolist()) <= bset:
            vi, lv = c.vertex_index[:, ::-1], c.levels[::-1]
        else:
            vi = None
        if vi is not None:
            tb = lv[-1]
            plus = g.vmap["+"][vi]
            minus = g.vmap["-"][vi][:, ::-1][:, 1:]
            levels = np.concatenate([lv, (2 * tb - lv)[::-1][1:]])
            collar = Collar(c.slice, levels, np.concatenate([plus, minus], axis=1), len(lv) - 1)
    regions = {"+": out.regions["+"], "-": out.regions["-"], "all": np.arange(len(out.top))}
    return out.with_(regions=regions, collar=collar, meta={"double": True, "involution": inv.tolist()})


# ---------------------------------------------------------------------------
# coverings


@dataclass(frozen=True, eq=False)
class CoveringMap:
    total: Mesh
    base: Mesh
    projection: np.ndarray  # total vertex -> base vertex
    sheets: int
    factors: tuple
    sheet_of: np.ndarray  # total vertex -> sheet index

    def deck(self, shift):
        """Vertex permutation of the deck translation by ``shift`` base periods."""
        N = self.base.meta["N"]
        out = np.empty(self.total.n_vertices, dtype=np.int64)
        for i, key in enumerate(self.total.keys):
            new = tuple((k + s * n) % (n * f) for k, s, n, f in zip(key, shift, N, self.factors))
            out[i] = self.total.key_index[new]
        return out


def covering(m: Mesh, factors) -> CoveringMap:
    """Factor-wise unrolled torus covering ``m``."""
    if m.meta.get("generator") != "torus":
        raise ConfigurationError("coverings are only supported for torus meshes")
    N, side = m.meta["N"], m.meta["side"]
    factors = tuple(int(f) for f in factors)
    if len(factors) != len(N) or min(factors) < 1:
        raise ConfigurationError("one positive sheet factor per torus direction")
    total = gen.torus([n * f for n, f in zip(N, factors)], [s * f for s, f in zip(side, factors)], len(N))
    total = total.with_(metric_scale=m.metric_scale)
    proj = np.array([m.key_index[tuple(k % n for k, n in zip(key, N))] for key in total.keys])
    sheet = np.array([np.ravel_multi_index(tuple(k // n for k, n in zip(key, N)), factors) for key in total.keys])
    return CoveringMap(total, m, proj, int(np.prod(factors)), factors, sheet)


# ---------------------------------------------------------------------------
# plan builders for the reference surgeries


def square_loop(m):
    """Vertices of the boundary of [0, m]^2 in cyclic order."""
    return ([(i, 0) for i in range(m)] + [(m, j) for j in range(m)]
            + [(m - i, m) for i in range(m)] + [(0, m - j) for j in range(m)])


def torus_loop_plan(t: Mesh, width=1, axis=0, offset=0, collar_levels=8) -> SurgeryPlan:
    """1-surgery plan along an essential circle of a torus (S^1 x D^(n-1)).

    The circle runs along ``axis``; its normal disk is the cube grid of side
    ``width`` starting at ``offset`` in every other direction.
    """
    if t.meta.get("generator") != "torus":
        raise PlanError("torus_loop_plan needs a torus mesh")
    N = t.meta["N"]
    n = len(N)
    if N[axis] % 4:
        raise PlanError("the surgered circle needs a multiple of 4 vertices")
    if any(width + 1 > N[a] - 1 for a in range(n) if a != axis):
        raise PlanError("normal disk too wide for the torus")
    m = N[axis] // 4
    others = [a for a in range(n) if a != axis]
    emb = {}
    for i, a in enumerate(square_loop(m)):
        for d in np.ndindex(*(width + 1,) * (n - 1)):
            coord = [0] * n
            coord[axis] = i
            for j, ax in enumerate(others):
                coord[ax] = (offset + d[j]) % N[ax]
            emb[tuple(a) + tuple(int(x) for x in d)] = t.key_index[tuple(coord)]
    return SurgeryPlan(1, n - 1, m, width, emb, collar_levels)


def sphere_zero_plan(s: Mesh, width=1, offset=None, collar_levels=8) -> SurgeryPlan:
    """0-surgery plan on the cubed sphere: two disks on opposite faces."""
    if s.meta.get("generator") != "sphere":
        raise PlanError("sphere_zero_plan needs a cubed-sphere mesh")
    N = s.meta["N"]
    off = (N - width) // 2 if offset is None else offset
    if off < 1 or off + width > N - 1:
        raise PlanError("disk does not fit inside a cube face")
    last = None
    for swap in (False, True):
        emb = {}
        for dx in range(width + 1):
            for dy in range(width + 1):
                emb[(0, dx, dy)] = s.key_index[(off + dx, off + dy, 0)]
                ex, ey = (dy, dx) if swap else (dx, dy)
                emb[(1, dx, dy)] = s.key_index[(off + ex, off + ey, N)]
        plan = SurgeryPlan(0, 2, 1, width, emb, collar_levels)
        try:
            surgery(s, plan)
            return plan
        except PlanError as exc:
            last = exc
    raise PlanError(f"no orientable 0-surgery found: {last}")


def slab(slice_mesh: Mesh, levels, tag="L") -> Mesh:
    """Product ``slice x [levels]`` with keys ``(slice_key, level_index)``.

    ``levels`` are metric coordinates; the result carries a Collar whose
    vertex_index lists slice vertex by level.
    """
    lv = np.asarray(levels, float)
    k = slice_mesh.dim
    n = len(lv)
    if n < 2:
        raise ConfigurationError("a slab needs at least two levels")
    keys = slice_mesh.keys
    top = []
    for c in slice_mesh.top if k > 0 else np.arange(slice_mesh.n_vertices)[:, None]:
        for l in range(n - 1):
            top.append([(keys[v], l + b) for b in (0, 1) for v in c])

    def measure(d, corner_keys):
        ls = sorted({ck[1] for ck in corner_keys})
        sk = list(dict.fromkeys(ck[0] for ck in corner_keys))
        ids = [slice_mesh.key_index[x] for x in sk]
        sd = d - (len(ls) - 1)
        ms = 1.0 if sd == 0 else float(slice_mesh.measure(sd)[slice_mesh.face_index(sd, ids)])
        return ms * (abs(lv[ls[-1]] - lv[ls[0]]) if len(ls) > 1 else 1.0)

    mesh = mesh_from_top_cells(k + 1, top, measure, meta={"generator": "slab", "tag": tag})
    vi = np.array([[mesh.key_index[(key, l)] for l in range(n)] for key in keys])
    return mesh.with_(collar=Collar(slice_mesh, lv, vi, 0))
