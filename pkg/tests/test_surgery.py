import numpy as np
import pytest

from klab import ConfigurationError
from klab.bundle import curvature, monopole_bundle, perturbed_flat, trivial_bundle
from klab.chern import chern_densities
from klab.mesh import connected_sum, sphere, torus
from klab.surgery import TransplantResult, collapse_map_pullback, threshold_scan, transplant
from klab.trivialize import Obstruction


def test_transplant_trivial_bundle(surgered_t8):
    # [TRIVIAL] zero curvature gives zero integrals
    res = transplant(trivial_bundle(surgered_t8))
    assert isinstance(res, TransplantResult)
    for row in res.integrals.values():
        assert all(v == 0 for v in row.values())
    assert res.identity_residual == 0


def test_transplant_small_curvature(surgered_t8):
    # [PAPER] integral decomposition over M', Y and X
    b = perturbed_flat(surgered_t8, 0.01, 1, 5)
    res = transplant(b)
    assert isinstance(res, TransplantResult)
    assert res.identity_residual <= 1e-6
    assert abs(res.integrals["c1"]["M#"]) <= 1e-6
    # the pieces are a torus and a sphere
    assert res.bundle_MY.base.euler_characteristic() == 0
    assert res.bundle_XY.base.euler_characteristic() == 2
    assert res.bundle_MY.base.is_closed() and res.bundle_XY.base.is_closed()


def test_transplant_rank2(surgered_t8):
    # [PAPER] integral decomposition over M', Y and X
    res = transplant(perturbed_flat(surgered_t8, 0.01, 2, 1))
    assert isinstance(res, TransplantResult) and res.identity_residual <= 1e-6


def test_transplant_requires_surgery_mesh():
    # [TRIVIAL] input validation
    with pytest.raises(ConfigurationError):
        transplant(trivial_bundle(torus(4)))


def test_transplant_q2_obstruction():
    # [PAPER] codimension 2 slices are not simply connected
    m = connected_sum(torus(8), torus(8), 0, 0)
    res = transplant(trivial_bundle(m))
    assert isinstance(res, Obstruction) and res.kind == "not_simply_connected"


def test_collapse_map_t2_s2():
    # [PAPER] degree-one pullback keeps c1
    t = torus(16)
    m = connected_sum(t, sphere(4), 0, 0)
    b = monopole_bundle(t, 1)
    pb = collapse_map_pullback(b, m)
    assert chern_densities(pb).totals["c1"] == pytest.approx(1.0, abs=1e-9)
    assert curvature(pb).sup_norm == pytest.approx(curvature(b).sup_norm, abs=1e-12)
    assert curvature(collapse_map_pullback(trivial_bundle(t), m)).sup_norm == 0.0
    # transports are copied on the first summand and the identity on the second
    m2 = set(np.unique(m.top[m.regions["M2"]]).tolist())
    e = m.edges
    inside = np.array([a in m2 and c in m2 for a, c in e])
    assert np.array_equal(pb.transport[inside], np.ones((inside.sum(), 1, 1)))


def test_collapse_map_label_mismatch():
    # [TRIVIAL] input validation
    with pytest.raises(ConfigurationError):
        collapse_map_pullback(trivial_bundle(torus(4)), torus(4))


def test_threshold_scan(surgered_t8):
    # [DERIVED] smallest nonzero-sector curvature is the flux-1 value 2 pi / A
    scan = threshold_scan(surgered_t8)
    assert scan.ok
    assert scan.delta_star == pytest.approx(2 * np.pi / surgered_t8.total_volume(), rel=1e-9)
