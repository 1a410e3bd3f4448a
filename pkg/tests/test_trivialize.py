import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from klab import ConfigurationError, PreconditionError
from klab.bundle import (Bundle, circle_holonomy_bundle, curvature, gauge, holonomies, monopole_bundle,
                         oriented, perturbed_flat, random_gauge, trivial_bundle)
from klab.chern import chern_densities
from klab.linalg import opnorm
from klab.mesh import cylinder, disjoint_union, slab, sphere
from klab.trivialize import (CutoffProfile, FrameCertificate, Obstruction, calibrate, collar_extend,
                             default_profile, edge_residuals, flatten_collar, flatten_map, relax_gauge,
                             tree_edges, tree_gauge, trivialize)


def test_tree_gauge_restores_flat_bundle(s8):
    # [DERIVED] flat bundles are gauge trivial on simply connected meshes
    b = gauge(trivial_bundle(s8, 2), random_gauge(s8, 2, 1))
    out = gauge(b, tree_gauge(b))
    te = tree_edges(s8)
    assert np.allclose(out.transport[te], np.eye(2), atol=1e-13, rtol=0)
    assert edge_residuals(out).max() < 1e-12


def test_tree_gauge_monopole_fill_bound(s8):
    # [PAPER] residual of a loop is bounded by the curvature integral over a filling disk
    b = monopole_bundle(s8, 1)
    out = gauge(b, tree_gauge(b))
    r = curvature(b).sup_norm
    assert edge_residuals(out).max() <= r * s8.total_volume() / 2 + 1e-10


def test_tree_gauge_basepoints_equivalent(s8):
    # [DERIVED] curvature is gauge invariant
    b = perturbed_flat(s8, 0.02, 1, 4)
    c0 = curvature(gauge(b, tree_gauge(b, 0))).sup_norm
    c1 = curvature(gauge(b, tree_gauge(b, 17))).sup_norm
    assert c0 == pytest.approx(c1, abs=1e-12)


def test_relax_identity_bundle(s8):
    # [TRIVIAL] already flat
    g, tr = relax_gauge(trivial_bundle(s8))
    assert tr.iterations == 0 and tr.residual[0] == 0.0


def test_relax_monotone_and_converges(s8):
    # [TRIVIAL] monotone objective
    b = perturbed_flat(s8, 0.01, 1, 3)
    b0 = gauge(b, tree_gauge(b))
    g, tr = relax_gauge(b0, max_iters=500)
    obj = np.array(tr.objective)
    assert np.all(np.diff(obj) <= 0)
    out = gauge(b0, g)
    assert edge_residuals(out).max() <= 10 * 0.01


def test_relax_monopole_floor(s8):
    # [PAPER] nonzero flux keeps residuals bounded below
    b = monopole_bundle(s8, 1)
    b0 = gauge(b, tree_gauge(b))
    _, tr = relax_gauge(b0, max_iters=300)
    assert tr.objective[-1] > 0.01 * tr.objective[0]
    assert np.all(np.diff(tr.objective) <= 0)


def test_trivialize_disconnected_spheres():
    # [DERIVED] flat bundles on S^2 x S^0 are trivial
    u = disjoint_union(sphere(4), sphere(4))
    b = gauge(trivial_bundle(u, 2), random_gauge(u, 2, 2))
    cert = trivialize(b, 1e-10)
    assert isinstance(cert, FrameCertificate)
    assert cert.residual <= 1e-10


def test_trivialize_obstructions(s8):
    # [PAPER] Chern numbers and loop holonomy obstruct frames
    ob = trivialize(monopole_bundle(s8, 1), 0.1)
    assert isinstance(ob, Obstruction) and ob.kind == "nonzero_chern"
    assert ob.witness["value"] == pytest.approx(1.0)
    ob = trivialize(circle_holonomy_bundle(cylinder(8), np.pi), 0.1)
    assert isinstance(ob, Obstruction) and ob.kind == "holonomy"
    with pytest.raises(ConfigurationError):
        trivialize(trivial_bundle(s8), 0.0)


def test_trivialize_certificate_recheck(s8):
    # [TRIVIAL] certificate reproduces
    b = perturbed_flat(s8, 0.01, 1, 8)
    cert = trivialize(b, 0.01)
    assert isinstance(cert, FrameCertificate)
    again = edge_residuals(gauge(b, cert.gauge)).max()
    assert again == pytest.approx(cert.residual, abs=1e-12)
    assert cert.constant_estimate == pytest.approx(cert.residual / curvature(b).sup_norm)


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2 ** 31), st.sampled_from([1, 2, 3]))
def test_nonzero_chern_never_certified(seed, k):
    # [PAPER] nonzero Chern numbers obstruct frames
    m = sphere(4)
    from klab.bundle import perturb

    b = perturb(monopole_bundle(m, k), 0.05, seed)
    assert isinstance(trivialize(b, 10.0), Obstruction)


def test_calibration_is_cached():
    # [TRIVIAL] cache
    m = sphere(4)
    c1 = calibrate(m, samples=3)
    c2 = calibrate(m, samples=3)
    assert c1 == c2 > 0


def test_cutoff_profile_rules():
    # [TRIVIAL] profile validation
    p = default_profile()
    assert p(1.0) == 1.0 and p(5.0) == 0.0 and p(3.0) == 0.5
    with pytest.raises(ConfigurationError):
        CutoffProfile((0.0, 2.0, 2.5, 6.0), (1.0, 1.0, 0.4, 0.0))  # slope 1.2
    with pytest.raises(ConfigurationError):
        CutoffProfile((0.0, 2.0, 4.0, 6.0), (1.0, 1.0, 0.0, 0.1))
    with pytest.raises(ConfigurationError):
        CutoffProfile((0.0, 3.0, 4.0, 6.0), (1.0, 0.2, 0.5, 0.0))


def _collar_bundle(sl, bs, levels):
    m = slab(sl, levels)
    vi = m.collar.vertex_index
    r = bs.rank
    tr = np.broadcast_to(np.eye(r, dtype=complex), (m.n_edges, r, r)).copy()
    for l in range(len(levels)):
        e, s = m.edge_lookup(vi[sl.edges[:, 0], l], vi[sl.edges[:, 1], l])
        tr[e] = oriented(bs.transport, s)
    return Bundle(m, tr)


def test_collar_extend_flat_input():
    # [DERIVED] flat in gives flat out
    sl = sphere(2)
    b = _collar_bundle(sl, trivial_bundle(sl), [-2, -1, 0, 1, 2])
    cert = trivialize(trivial_bundle(sl), 0.1)
    ext = collar_extend(b, cert.gauge, eps0=0.0 + 1e-15)
    assert curvature(ext.bundle).sup_norm == 0.0


def test_collar_extend_bounds_and_flat_end():
    # [PAPER] extension curvature bounded by delta + eps0 + eps0^2
    sl = sphere(4)
    bs = perturbed_flat(sl, 0.01, 2, 3)
    b = _collar_bundle(sl, bs, [-2, -1, 0, 1, 2])
    cert = trivialize(bs, 1.0)
    eps0 = 0.02
    ext = collar_extend(b, cert.gauge, eps0=eps0)
    out = ext.bundle
    assert curvature(out).sup_norm <= 1.05 * (0.01 + eps0 + eps0 ** 2)
    pl = out.base.region_cells("extension_flat", 2)
    assert len(pl) > 0
    assert np.array_equal(holonomies(out, pl), np.broadcast_to(np.eye(2), (len(pl), 2, 2)))
    # restriction to the original collar is the input bundle
    keep = out.base.regions["extension"]
    assert len(keep) == len(ext.extension_cells)
    with pytest.raises(PreconditionError):
        collar_extend(b, cert.gauge, eps0=1e-9)


def test_flatten_collar_properties(surgered_t8):
    # [DERIVED] Lipschitz-2 pullback scales curvature by at most 4
    m = surgered_t8
    b = perturbed_flat(m, 0.02, 1, 2)
    out = flatten_collar(b)
    assert curvature(out).sup_norm <= 4 * curvature(b).sup_norm + 1e-12
    assert chern_densities(out).totals["c1"] == pytest.approx(chern_densities(b).totals["c1"], abs=1e-9)
    # the middle half of the collar is pulled back from the cut slice
    col = m.collar
    mid = np.abs(col.levels) < np.abs(col.levels).max() / 2
    pair = np.flatnonzero(mid[:-1] & mid[1:])
    a, c = col.vertex_index[:, pair].ravel(), col.vertex_index[:, pair + 1].ravel()
    e, _ = m.edge_lookup(a, c)
    assert np.array_equal(out.transport[e], np.ones((len(e), 1, 1)))
    f = flatten_map(m)
    assert f.degree == 1 and f.lipschitz <= 2.0 + 1e-12


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0.001, 0.05))
def test_flatten_factor_bound(seed, delta):
    # [DERIVED] Lipschitz-2 pullback scales curvature by at most 4
    from klab.mesh import surgery, torus, torus_loop_plan

    t = torus(8)
    m = surgery(t, torus_loop_plan(t))
    b = perturbed_flat(m, delta, 1, seed)
    assert curvature(flatten_collar(b)).sup_norm <= 4 * delta * (1 + 1e-9) + 1e-12


def test_global_and_local_relaxation_agree(s8):
    # [DERIVED] both phases minimise the same convex-near-identity objective
    b = perturbed_flat(s8, 0.01, 2, 11)
    b0 = gauge(b, tree_gauge(b))
    _, fast = relax_gauge(b0, max_iters=2000)
    _, slow = relax_gauge(b0, max_iters=2000, global_steps=False)
    assert fast.iterations < 20 < slow.iterations
    assert np.all(np.diff(slow.objective) <= 0)
    assert fast.objective[-1] == pytest.approx(slow.objective[-1], rel=1e-3)
