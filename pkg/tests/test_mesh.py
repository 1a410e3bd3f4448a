import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from klab import ConfigurationError, GluingError, PlanError
from klab.mesh import (connected_sum, covering, cylinder, disjoint_union, disk, double, gen_mesh,
                       handle, load_mesh, mesh_from_dict, mesh_to_dict, save_mesh, scale_metric, slab,
                       sphere, sphere_zero_plan, submesh, surgery, torus, torus_loop_plan)


@pytest.mark.parametrize("m,chi", [
    (lambda: torus(8), 0),
    (lambda: sphere(4), 2),
    (lambda: torus(4, dim=4), 0),
    (lambda: disk(), 1),
    (lambda: cylinder(6), 0),
    (lambda: handle(1, 1), 2),
    (lambda: handle(0, 2), 0),
])
def test_euler_characteristic(m, chi):
    # [DERIVED] classical Euler characteristics
    mesh = m()
    assert mesh.euler_characteristic() == chi
    assert mesh.boundary_of_boundary_ok()


def test_torus_counts_and_area():
    # [DERIVED] f-vector and area of the n x n torus
    t = torus(8)
    assert t.f_vector == (64, 128, 64)
    assert t.total_volume() == pytest.approx(4 * np.pi ** 2, rel=1e-14)
    assert t.betti_numbers() == [1, 2, 1]
    assert t.is_closed()


def test_sphere_area_converges():
    # [DERIVED] polyhedral area increases towards 4 pi
    errs = [abs(sphere(n).total_volume() - 4 * np.pi) for n in (2, 4, 8, 16)]
    assert all(a > b for a, b in zip(errs, errs[1:]))
    assert errs[-1] / (4 * np.pi) < 3e-3


def test_cylinder_boundary():
    # [DERIVED] two boundary circles
    c = cylinder(8)
    assert not c.is_closed()
    assert len(c.boundary_facets) == 16


def test_product_torus_4d():
    # [DERIVED] f-vector of T^4
    t = torus(4, dim=4)
    assert t.f_vector == (256, 1024, 1536, 1024, 256)
    assert t.fundamental_cycle_ok()


def test_scale_metric():
    # [DERIVED] k-volumes scale by c^k
    t = torus(4)
    s = scale_metric(t, 2.0)
    assert np.array_equal(s.plaquette_area, 4 * t.plaquette_area)
    assert np.array_equal(s.edge_length, 2 * t.edge_length)
    with pytest.raises(ConfigurationError):
        scale_metric(t, 0.0)


def test_connected_sums():
    # [DERIVED] chi(M1 # M2) = chi1 + chi2 - 2
    assert connected_sum(torus(4), sphere(2), 0, 0).euler_characteristic() == 0
    tt = connected_sum(torus(4), torus(4), 0, 0)
    assert tt.euler_characteristic() == -2
    assert tt.betti_numbers() == [1, 4, 1]
    assert set(tt.regions) >= {"M1", "M2", "collar"}


def test_connected_sum_rejects_bad_input():
    # [TRIVIAL] input validation
    with pytest.raises(GluingError):
        connected_sum(torus(4), disk(), 0, 0)
    with pytest.raises(GluingError):
        connected_sum(torus(4), torus(4), 999, 0)


def test_torus_surgery_gives_sphere(surgered_t8):
    # [DERIVED] 1-surgery on a torus loop gives S^2
    m = surgered_t8
    assert m.euler_characteristic() == 2
    assert m.betti_numbers() == [1, 0, 1]
    assert m.is_closed()
    col = m.collar
    assert col.levels[col.cut] == 0.0
    x = m.regions["X"]
    cut_vertices = col.vertex_index[:, col.cut]
    # the cut level bounds both sides
    assert np.isin(cut_vertices, m.top[x]).all()
    assert np.isin(cut_vertices, m.top[m.regions["M_prime"]]).all()


def test_sphere_zero_surgery():
    # [DERIVED] 0-surgery on S^2 gives a torus
    s = sphere(4)
    out = surgery(s, sphere_zero_plan(s))
    assert out.euler_characteristic() == 0


def test_surgery_plan_errors():
    # [TRIVIAL] input validation
    t = torus(8)
    plan = torus_loop_plan(t)
    plan.p, plan.q = 2, 1
    with pytest.raises(PlanError):
        surgery(t, plan)


def test_double_and_covering():
    # [DERIVED] Euler characteristic is multiplicative under coverings
    assert double(disk()).euler_characteristic() == 2
    assert double(cylinder(6)).euler_characteristic() == 0
    cov = covering(torus(8), (2, 2))
    assert cov.sheets == 4
    assert cov.total.total_volume() == pytest.approx(4 * torus(8).total_volume())


def test_disjoint_union_and_submesh():
    # [TRIVIAL] bookkeeping
    u = disjoint_union(sphere(2), sphere(2))
    assert u.betti_numbers()[0] == 2
    t = torus(8)
    sub, parent = submesh(t, np.arange(10))
    assert len(sub.top) == 10
    assert np.all(parent >= 0)


def test_slab_volume():
    # [DERIVED] slice volume times interval length
    s = sphere(4)
    m = slab(s, [0.0, 1.0, 2.5])
    assert m.total_volume() == pytest.approx(2.5 * s.total_volume())
    assert m.euler_characteristic() == 2


def test_mesh_io_roundtrip(tmp_path, surgered_t8):
    # [TRIVIAL] round trip
    path = tmp_path / "m.json"
    save_mesh(surgered_t8, path)
    back = load_mesh(path)
    assert back.hash == surgered_t8.hash
    assert back.collar.cut == surgered_t8.collar.cut
    d = mesh_to_dict(torus(4))
    assert mesh_from_dict(d).hash == torus(4).hash


def test_gen_mesh_validation():
    # [TRIVIAL] input validation
    assert gen_mesh({"generator": "torus", "n": 4}).f_vector == (16, 32, 16)
    with pytest.raises(ConfigurationError):
        gen_mesh({"generator": "klein"})
    with pytest.raises(ConfigurationError):
        gen_mesh({"generator": "torus", "bogus": 1})


@settings(max_examples=15, deadline=None)
@given(st.integers(3, 12), st.integers(3, 12))
def test_torus_invariants(n1, n2):
    # [DERIVED] Betti numbers of tori
    t = torus([n1, n2])
    assert t.euler_characteristic() == 0
    assert t.boundary_of_boundary_ok()
    assert t.fundamental_cycle_ok()
    assert t.n_plaquettes == n1 * n2
