import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from klab import BranchCutError, ConfigurationError
from klab.bundle import (Bundle, gauge, monopole_bundle, perturb, perturbed_flat, random_gauge,
                         trivial_bundle)
from klab.chern import chern_densities, chern_number, in_k_cross, parse_polynomial
from klab.linalg import expu, logu
from klab.mesh import disjoint_union, products_s1s1s2, sphere, torus


@pytest.mark.parametrize("k", [-3, -1, 0, 2, 3])
def test_c1_of_monopoles(k, s8, t8):
    # [DERIVED] exact flux sums
    for m in (s8, t8):
        assert chern_densities(monopole_bundle(m, k)).totals["c1"] == pytest.approx(k, abs=1e-9)


def test_trivial_densities_vanish():
    # [TRIVIAL] zero curvature
    for m in (torus(4), torus(3, dim=4)):
        rep = chern_densities(trivial_bundle(m, 2))
        for v in rep.densities.values():
            assert np.all(v == 0)


def test_t4_wedge_oracle():
    # [DERIVED] c1^2 = 2 k1 k2 for orthogonal fluxes; c2 = 0 for rank 1
    rep = chern_densities(monopole_bundle(torus(4, dim=4), (2, 3)))
    assert rep.totals["c1^2"] == pytest.approx(12.0, rel=1e-10)
    assert rep.totals["c2"] == 0.0


def test_s1s1s2_product_flux():
    # [DERIVED] c1^2 = 2 kt ks on T^2 x S^2
    m = products_s1s1s2(4, 2)
    rep = chern_densities(monopole_bundle(m, (1, 2)))
    assert rep.totals["c1^2"] == pytest.approx(4.0, rel=1e-9)


def test_rank2_c2_of_split_bundle():
    # [DERIVED] E = L1 + L2 over T^4: c2 = c1(L1) c1(L2) = k1 k2' + k2 k1'
    from klab.bundle import direct_sum

    m = torus(4, dim=4)
    b = direct_sum(monopole_bundle(m, {(0, 1): 1}), monopole_bundle(m, {(2, 3): 1}))
    rep = chern_densities(b)
    assert rep.totals["c2"] == pytest.approx(1.0, rel=1e-9)
    assert rep.totals["c1^2"] == pytest.approx(2.0, rel=1e-9)


def test_polynomial_parser():
    # [TRIVIAL] parser
    p = parse_polynomial("c1^2 - 2c2")
    assert p.dim == 4 and p.terms == {"c1^2": 1, "c2": -2}
    assert parse_polynomial("1/2 c1^2 - c2").terms["c1^2"] == 0.5
    assert parse_polynomial("0", 2).terms == {}
    for bad in ("c3", "c1 + c2", "c1^", "", "1"):
        with pytest.raises(ConfigurationError):
            parse_polynomial(bad)


def test_chern_number_examples(t8):
    # [DERIVED] polynomials in exact totals
    assert chern_number(monopole_bundle(t8, 1), "c1") == pytest.approx(1.0)
    m4 = torus(4, dim=4)
    b = perturb(monopole_bundle(m4, (1, 1)), 0.02, 1)
    rep = chern_densities(b)
    assert chern_number(b, "c1^2 - 2c2", rep) == pytest.approx(rep.totals["c1^2"], abs=1e-12)
    assert chern_number(b, parse_polynomial("0", 4)) == 0.0
    with pytest.raises(ConfigurationError):
        chern_number(b, "c1")


def test_in_k_cross(s8):
    # [DERIVED] admissibility follows nonzero totals
    v = in_k_cross(monopole_bundle(s8, 1))
    assert v.admissible and v.witness == "c1"
    assert not in_k_cross(trivial_bundle(s8)).admissible
    b = monopole_bundle(s8, 1)
    curved = Bundle(s8.with_(regions={**s8.regions, "flat": np.arange(4)}), b.transport, ("flat",))
    assert not in_k_cross(curved).admissible


def test_disjoint_union_additivity():
    # [DERIVED] totals add over components
    m1, m2 = torus(4), sphere(4)
    u = disjoint_union(m1, m2)
    b1 = perturb(monopole_bundle(m1, 1), 0.1, 1)
    b2 = perturb(monopole_bundle(m2, -2), 0.1, 2)
    t = np.concatenate([b1.transport, b2.transport])
    # union edges are relabelled; rebuild transports through vertex keys
    tr = np.empty((u.n_edges, 1, 1), complex)
    for tag, m, b in (("1", m1, b1), ("2", m2, b2)):
        for i, (a, c) in enumerate(m.edges):
            e, s = u.edge_lookup([u.key_index[(tag, m.keys[a])]], [u.key_index[(tag, m.keys[c])]])
            tr[e[0]] = b.transport[i] if s[0] > 0 else np.conj(b.transport[i])
    del t
    rep = chern_densities(Bundle(u, tr))
    parts = [math.fsum(chern_densities(b).densities["c1"]) for b in (b1, b2)]
    assert rep.component_totals["c1"] == parts
    assert rep.totals["c1"] == parts[0] + parts[1]


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_gauge_invariance_of_totals(seed):
    # [DERIVED] Chern totals are gauge invariant
    m = torus(4, dim=4)
    b = perturb(monopole_bundle(m, (1, 1)), 0.05, seed)
    g = random_gauge(m, 1, seed + 3)
    a, c = chern_densities(b).totals, chern_densities(gauge(b, g)).totals
    for k in a:
        assert a[k] == pytest.approx(c[k], abs=1e-10)


def test_gauge_invariance_rank2_surface(s8):
    # [DERIVED] Chern totals are gauge invariant
    b = perturbed_flat(s8, 0.05, 2, 1)
    g = random_gauge(s8, 2, 9)
    assert chern_densities(gauge(b, g)).totals["c1"] == pytest.approx(chern_densities(b).totals["c1"], abs=1e-10)


def test_sector_stability_along_interpolation(t8):
    # [PAPER] sectors are locally constant away from the branch cut
    # totals constant along a path that stays away from the branch cut
    b0 = monopole_bundle(t8, 1)
    b1 = perturb(b0, 0.3, 5)
    a = logu(b1.transport @ np.conj(b0.transport))
    vals = []
    for s in np.linspace(0, 1, 11):
        vals.append(chern_densities(Bundle(t8, expu(s * a) @ b0.transport)).totals["c1"])
    assert np.ptp(vals) < 1e-9


def test_branch_cut_propagates():
    # [TRIVIAL] error propagation
    m = torus(4)
    b = monopole_bundle(m, 8)  # plaquette angle -pi: on the cut
    with pytest.raises(BranchCutError):
        chern_densities(b)
