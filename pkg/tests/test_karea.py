import numpy as np
import pytest

from klab import ConfigurationError, PreconditionError
from klab.bundle import curvature, monopole_bundle, trivial_bundle
from klab.karea import (OptimizerConfig, _Problem, covering_experiment, karea_lower_bound,
                        minimize_curvature, scaling_experiment, sector_bundle)
from klab.mesh import sphere, torus


def test_config_validation():
    # [TRIVIAL] input validation
    for bad in ({"s": 3}, {"s": 0}, {"step": 0.0}, {"max_iters": -1}):
        with pytest.raises(ConfigurationError):
            OptimizerConfig(**bad)


def test_constant_curvature_is_stationary(t8):
    # [DERIVED] uniform flux minimizes the sup norm: oracle A / 2 pi
    est = minimize_curvature(t8, monopole_bundle(t8, 1))
    assert est.lower_bound == pytest.approx(t8.total_volume() / (2 * np.pi), rel=1e-6)
    assert est.lower_bound * est.sup_norm == pytest.approx(1.0, abs=1e-12)


def test_perturbed_start_recovers(t8):
    # [DERIVED] uniform flux optimum 2 pi / A
    est = minimize_curvature(t8, sector_bundle(t8, 1, 1, 0.1, 3))
    target = 2 * np.pi / t8.total_volume()
    assert abs(est.sup_norm / target - 1) < 0.01
    assert np.all(np.diff(est.trace) <= 0)
    assert est.sector_escapes == 0
    assert est.sector_end["c1"] == pytest.approx(1.0, abs=1e-6)


def test_inadmissible_start(t8):
    # [TRIVIAL] precondition
    with pytest.raises(PreconditionError):
        minimize_curvature(t8, trivial_bundle(t8))


def test_sphere_sectors():
    # [DERIVED] flux k on unit S^2 gives bound 2 / k
    s = sphere(16)
    best, results, _ = karea_lower_bound(s, [(1, 1), (1, 2)])
    assert best.lower_bound == pytest.approx(2.0, rel=0.02)
    assert results[0][1].lower_bound > results[1][1].lower_bound


def test_scaling_and_covering(t8):
    # [PAPER] scaling by c^2 and covering by sheet count
    rep = scaling_experiment(t8, 2.0, perturbation=0.05)
    assert rep["ok"] and rep["ratio"] == pytest.approx(4.0, rel=1e-3)
    assert scaling_experiment(t8, 1.0)["ratio"] == 1.0
    cov = covering_experiment(t8, (2, 2), perturbation=0.05)
    assert cov["ok"] and cov["direct_image_monotone"]
    assert covering_experiment(t8, (1, 1))["ratio"] == pytest.approx(1.0)


def test_refinement_stable():
    # [DERIVED] bound depends on area only
    bounds = [karea_lower_bound(torus(n), [(1, 1)])[0].lower_bound for n in (8, 16, 32)]
    assert np.ptp(bounds) / np.mean(bounds) < 0.01


def test_softmax_gap_shrinks(t8):
    # [DERIVED] power-mean gap ~ log(n) / s
    from klab.bundle import perturb

    b = perturb(monopole_bundle(t8, 1), 0.2, 1)
    sup = curvature(b).sup_norm
    # [DERIVED] the power-mean gap behaves like sup * log(n_eff) / s for large s
    gaps = [sup - _Problem(t8, 1, s).evaluate(b.transport)[0] for s in (8, 16, 32, 64, 128)]
    assert all(g > 0 for g in gaps)
    assert all(b2 < b1 for b1, b2 in zip(gaps, gaps[1:]))
    assert 0.45 < gaps[-1] / gaps[-2] < 0.55


def test_rank2_sector_runs(t8):
    # [TRIVIAL] guard and monotone trace
    est = minimize_curvature(t8, sector_bundle(t8, 2, 1, 0.05, 1), OptimizerConfig(max_iters=300))
    assert est.sector_escapes == 0
    assert np.all(np.diff(est.trace) <= 0)
