"""Oriented cubical complexes with explicit piecewise-flat metric data.

A k-cell is stored by its ``2**k`` corner vertex ids in binary order: corner
``b`` sits at local coordinates given by the bits of ``b`` (bit ``i`` is axis
``i``).  The corner order fixes the orientation.  Lower-dimensional faces are
identified by their vertex sets, which is why periodic directions need at least
three vertices.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations, product as iproduct

import numpy as np
import scipy.sparse as sp

from .. import ConfigurationError, GluingError

FORMAT_VERSION = 1


def _face_patterns(n, k):
    """Index arrays selecting the corners of every k-face of an n-cube.

    Returns a list of ``(free_axes, fixed_axes, fixed_bits, idx)`` where
    ``idx`` has length ``2**k`` and lists the n-cube corners of the face in the
    face's own binary order (free axes ascending).
    """
    out = []
    for free in combinations(range(n), k):
        fixed = [a for a in range(n) if a not in free]
        for bits in iproduct((0, 1), repeat=len(fixed)):
            base = sum(b << a for a, b in zip(fixed, bits))
            idx = []
            for local in range(1 << k):
                c = base
                for j, a in enumerate(free):
                    if local >> j & 1:
                        c |= 1 << a
                idx.append(c)
            out.append((free, tuple(fixed), bits, np.array(idx)))
    return out


def relative_orientation(d, c):
    """+1/-1 comparing two corner descriptions ``d`` and ``c`` of one cube."""
    k = len(d).bit_length() - 1
    if k == 0:
        return 1
    pos = {int(v): i for i, v in enumerate(c)}
    c0 = pos[int(d[0])]
    axes = []
    refl = 0
    for j in range(k):
        diff = pos[int(d[1 << j])] ^ c0
        a = diff.bit_length() - 1
        if diff != 1 << a:
            raise GluingError("corner descriptions are not the same cube")
        axes.append(a)
        if c0 >> a & 1:
            refl += 1
    # permutation parity by counting inversions
    inv = sum(1 for i in range(k) for j in range(i + 1, k) if axes[i] > axes[j])
    return -1 if (inv + refl) % 2 else 1


def reflect_axis0(corners):
    """Reverse the orientation of cells by reflecting local axis 0."""
    corners = np.asarray(corners)
    n = corners.shape[-1]
    perm = np.arange(n) ^ 1
    return corners[..., perm]


def _rows_key(a):
    a = np.ascontiguousarray(a, dtype=np.int64)
    return [r.tobytes() for r in a]


def orient_cells(top, dim, fixed=None):
    """Flip top cells so that every interior facet cancels.

    ``fixed`` is an optional boolean mask of cells whose orientation must not
    change; returns ``(oriented, flipped_mask)``.  Raises GluingError on a
    non-orientable or non-manifold result.
    """
    top = np.asarray(top)
    n = len(top)
    if dim == 0 or n == 0:
        return top.copy(), np.zeros(n, bool)
    pats = [p for p in _face_patterns(dim, dim - 1)]
    # facet sign induced by the cube boundary: (-1)^axis * (+1 at bit 1, -1 at bit 0)
    inc = {}
    for ci in range(n):
        for free, fixed_axes, bits, idx in pats:
            a, b = fixed_axes[0], bits[0]
            s = (-1) ** a * (1 if b else -1)
            desc = top[ci, idx]
            key = tuple(sorted(int(v) for v in desc))
            inc.setdefault(key, []).append((ci, s, desc))
    nbrs = [[] for _ in range(n)]
    for key, lst in inc.items():
        if len(lst) > 2:
            raise GluingError(f"facet {key} has {len(lst)} incident top cells")
        if len(lst) == 2:
            (c1, s1, d1), (c2, s2, d2) = lst
            r = relative_orientation(d2, d1)
            # consistent iff s1 + s2*r == 0
            rel = -s1 * s2 * r
            nbrs[c1].append((c2, rel))
            nbrs[c2].append((c1, rel))
    flip = np.zeros(n, dtype=int)
    fixed = np.zeros(n, bool) if fixed is None else np.asarray(fixed, bool)
    order = list(np.flatnonzero(fixed)) + list(np.flatnonzero(~fixed))
    for start in order:
        if flip[start]:
            continue
        flip[start] = 1
        stack = [start]
        while stack:
            c = stack.pop()
            for nb, rel in nbrs[c]:
                want = flip[c] * rel
                if flip[nb] == 0:
                    if fixed[nb] and want != 1:
                        raise GluingError("gluing reverses the orientation of a fixed cell")
                    flip[nb] = want
                    stack.append(nb)
                elif flip[nb] != want:
                    raise GluingError("complex is not orientable")
    flipped = flip < 0
    out = top.copy()
    out[flipped] = reflect_axis0(out[flipped])
    return out, flipped


def build_cells(top, dim):
    """All faces of the given top cells, deduplicated by vertex set.

    Returns ``(cells, first)`` where ``cells[k]`` is the canonical corner array
    of k-cells sorted by vertex set and ``first[k]`` maps each k-cell to the
    index of a top cell containing it (the first in stacking order).
    """
    top = np.asarray(top, dtype=np.int64)
    cells = {dim: top}
    first = {dim: np.arange(len(top))}
    for k in range(1, dim):
        pats = _face_patterns(dim, k)
        descs = np.concatenate([top[:, p[3]] for p in pats], axis=0)
        owners = np.tile(np.arange(len(top)), len(pats))
        srt = np.sort(descs, axis=1)
        _, uidx = np.unique(srt, axis=0, return_index=True)
        cells[k] = descs[uidx]
        first[k] = owners[uidx]
    return cells, first


@dataclass(frozen=True, eq=False)
class Collar:
    """Product neighbourhood ``slice x levels`` inside a mesh.

    ``vertex_index[s, l]`` is the mesh vertex over slice vertex ``s`` at level
    ``l``; ``levels`` holds the collar coordinate t per level (metric units);
    ``cut`` is the level index where the mesh is cut (surgery) or the boundary.
    """

    slice: "Mesh"
    levels: np.ndarray
    vertex_index: np.ndarray
    cut: int = 0

    @property
    def n_levels(self):
        return len(self.levels)


@dataclass(frozen=True, eq=False)
class Mesh:
    dim: int
    keys: tuple
    cells: dict  # k -> (n_k, 2**k) corner ids, k >= 1
    base_measure: dict  # k -> (n_k,) lengths/areas/volumes at scale 1
    metric_scale: float = 1.0
    regions: dict = field(default_factory=dict)  # name -> top-cell indices
    collar: Collar | None = None
    meta: dict = field(default_factory=dict)

    # ---- sizes -------------------------------------------------------
    @property
    def n_vertices(self):
        return len(self.keys)

    def n_cells(self, k):
        if k == 0:
            return self.n_vertices
        return len(self.cells[k]) if k in self.cells else 0

    @property
    def f_vector(self):
        return tuple(self.n_cells(k) for k in range(self.dim + 1))

    def euler_characteristic(self):
        return sum((-1) ** k * n for k, n in enumerate(self.f_vector))

    @property
    def edges(self):
        return self.cells[1]

    @property
    def n_edges(self):
        return self.n_cells(1)

    @property
    def n_plaquettes(self):
        return self.n_cells(2)

    @property
    def top(self):
        return self.cells[self.dim] if self.dim > 0 else np.arange(self.n_vertices)[:, None]

    # ---- metric ------------------------------------------------------
    def measure(self, k):
        return self.base_measure[k] * self.metric_scale**k

    @property
    def edge_length(self):
        return self.measure(1)

    @property
    def plaquette_area(self):
        return self.measure(2)

    def total_volume(self):
        return float(np.sum(self.measure(self.dim)))

    # ---- lookups -----------------------------------------------------
    @cached_property
    def key_index(self):
        return {k: i for i, k in enumerate(self.keys)}

    @cached_property
    def _face_dicts(self):
        out = {}
        for k, c in self.cells.items():
            out[k] = {r: i for i, r in enumerate(_rows_key(np.sort(c, axis=1)))}
        return out

    def face_index(self, k, vertex_ids):
        """Index of the k-cell with the given vertex set, or -1."""
        r = np.sort(np.asarray(vertex_ids, dtype=np.int64)).tobytes()
        return self._face_dicts[k].get(r, -1)

    @cached_property
    def _edge_codes(self):
        e = self.edges.astype(np.int64)
        code = e[:, 0] * self.n_vertices + e[:, 1]
        order = np.argsort(code)
        return code[order], order

    def edge_lookup(self, v, w):
        """Vectorized (edge index, sign) for oriented vertex pairs v -> w."""
        v = np.asarray(v, dtype=np.int64)
        w = np.asarray(w, dtype=np.int64)
        codes, order = self._edge_codes
        n = self.n_vertices
        fwd = v * n + w
        rev = w * n + v
        i = np.clip(np.searchsorted(codes, fwd), 0, len(codes) - 1)
        j = np.clip(np.searchsorted(codes, rev), 0, len(codes) - 1)
        hit_f = codes[i] == fwd
        hit_r = codes[j] == rev
        if not np.all(hit_f | hit_r):
            bad = np.flatnonzero(~(hit_f | hit_r))[0]
            raise GluingError(f"no edge between vertices {np.ravel(v)[bad]} and {np.ravel(w)[bad]}")
        e = np.where(hit_f, order[i], order[j])
        s = np.where(hit_f, 1, -1)
        return e, s

    @cached_property
    def plaquette_cycles(self):
        """(P, 4) edge ids and signs tracing each plaquette c0->c1->c3->c2."""
        c = self.cells[2]
        path = c[:, [0, 1, 3, 2, 0]]
        e, s = self.edge_lookup(path[:, :-1], path[:, 1:])
        return e, s

    # ---- incidence ---------------------------------------------------
    @cached_property
    def boundary_matrices(self):
        """Signed incidence matrices d_k : C_k -> C_{k-1} (k = 1..dim)."""
        mats = {}
        e = self.edges
        ne = len(e)
        rows = np.concatenate([e[:, 1], e[:, 0]])
        cols = np.concatenate([np.arange(ne), np.arange(ne)])
        vals = np.concatenate([np.ones(ne), -np.ones(ne)])
        mats[1] = sp.csr_matrix((vals, (rows, cols)), shape=(self.n_vertices, ne))
        for k in range(2, self.dim + 1):
            rows, cols, vals = [], [], []
            pats = _face_patterns(k, k - 1)
            for ci, c in enumerate(self.cells[k]):
                for free, fixed_axes, bits, idx in pats:
                    a, b = fixed_axes[0], bits[0]
                    s = (-1) ** a * (1 if b else -1)
                    desc = c[idx]
                    fi = self.face_index(k - 1, desc)
                    canon = self.cells[k - 1][fi]
                    rows.append(fi)
                    cols.append(ci)
                    vals.append(s * relative_orientation(desc, canon))
            mats[k] = sp.csr_matrix(
                (np.array(vals, float), (rows, cols)), shape=(self.n_cells(k - 1), self.n_cells(k))
            )
        return mats

    def boundary_of_boundary_ok(self):
        for k in range(2, self.dim + 1):
            dd = self.boundary_matrices[k - 1] @ self.boundary_matrices[k]
            if dd.count_nonzero() and np.abs(dd.data).max() > 0:
                return False
        return True

    @cached_property
    def boundary_facets(self):
        """Indices of (dim-1)-cells with exactly one incident top cell."""
        if self.dim == 0:
            return np.array([], dtype=int)
        d = self.boundary_matrices[self.dim]
        counts = np.asarray(abs(d).sum(axis=1)).ravel()
        return np.flatnonzero(counts == 1)

    def is_closed(self):
        return len(self.boundary_facets) == 0

    def boundary_vertices(self):
        if self.dim == 0 or len(self.boundary_facets) == 0:
            return np.array([], dtype=int)
        if self.dim == 1:
            return np.asarray(self.boundary_facets)
        return np.unique(self.cells[self.dim - 1][self.boundary_facets])

    def fundamental_cycle_ok(self):
        """Oriented top cells sum to a relative cycle (orientation consistency)."""
        if self.dim == 0:
            return True
        d = self.boundary_matrices[self.dim]
        s = np.asarray(d.sum(axis=1)).ravel()
        interior = np.ones(len(s), bool)
        interior[self.boundary_facets] = False
        return bool(np.all(s[interior] == 0))

    def components(self):
        """Connected-component label per vertex (via the 1-skeleton)."""
        from scipy.sparse.csgraph import connected_components

        n = self.n_vertices
        if self.dim == 0:
            return np.arange(n)
        e = self.edges
        g = sp.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
        _, lab = connected_components(g, directed=False)
        return lab

    def betti_numbers(self):
        """Real Betti numbers from ranks of the incidence matrices."""
        ranks = {}
        for k in range(1, self.dim + 1):
            m = self.boundary_matrices[k].toarray()
            ranks[k] = int(np.linalg.matrix_rank(m)) if m.size else 0
        out = []
        for k in range(self.dim + 1):
            out.append(self.n_cells(k) - ranks.get(k, 0) - ranks.get(k + 1, 0))
        return out

    # ---- regions -----------------------------------------------------
    def region_cells(self, name, k=None):
        """Top-cell indices of a region, or with ``k`` the k-cells in its closure."""
        top = np.asarray(self.regions[name], dtype=int)
        if k is None or k == self.dim:
            return top
        verts = np.unique(self.top[top])
        if k == 0:
            return verts
        inside = np.isin(self.cells[k], verts).all(axis=1)
        return np.flatnonzero(inside)

    def region_vertices(self, name):
        return self.region_cells(name, 0)

    def with_(self, **changes):
        d = dict(
            dim=self.dim,
            keys=self.keys,
            cells=self.cells,
            base_measure=self.base_measure,
            metric_scale=self.metric_scale,
            regions=self.regions,
            collar=self.collar,
            meta=self.meta,
        )
        d.update(changes)
        return Mesh(**d)

    # ---- identity ----------------------------------------------------
    @cached_property
    def hash(self):
        h = hashlib.sha256()
        h.update(str(self.dim).encode())
        h.update(repr(self.keys).encode())
        for k in sorted(self.cells):
            h.update(np.ascontiguousarray(self.cells[k], dtype=np.int64).tobytes())
            h.update(np.ascontiguousarray(self.measure(k), dtype=np.float64).tobytes())
        return h.hexdigest()[:16]

    def __repr__(self):
        return f"Mesh(dim={self.dim}, f={self.f_vector}, chi={self.euler_characteristic()})"


def mesh_from_top_cells(dim, top_keys, measure_fn, metric_scale=1.0, orient=True, meta=None,
                        regions=None):
    """Assemble a mesh from top cells given as corner key lists.

    ``measure_fn(k, corner_keys)`` returns the k-measure of a cell described by
    its corner keys in binary order.
    """
    keys = []
    index = {}
    top_ids = []
    for cell in top_keys:
        row = []
        for key in cell:
            if key not in index:
                index[key] = len(keys)
                keys.append(key)
            row.append(index[key])
        top_ids.append(row)
    if dim == 0:
        base = {}
        return Mesh(dim, tuple(keys), {}, base, metric_scale, regions or {}, None, meta or {})
    top = np.array(top_ids, dtype=np.int64).reshape(len(top_ids), 1 << dim)
    if orient:
        top, _ = orient_cells(top, dim)
    cells, _ = build_cells(top, dim)
    base = {}
    for k in range(1, dim + 1):
        base[k] = np.array([float(measure_fn(k, [keys[v] for v in c])) for c in cells[k]])
        if np.any(base[k] <= 0):
            raise ConfigurationError(f"non-positive {k}-measure produced by generator")
    return Mesh(dim, tuple(keys), cells, base, metric_scale, regions or {}, None, meta or {})
