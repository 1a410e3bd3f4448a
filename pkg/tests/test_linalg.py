import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from klab import BranchCutError
from klab.linalg import (branch_distance, dagger, expu, logu, opnorm, opnorm_normal,
                         random_antihermitian, random_unitary)


@pytest.mark.parametrize("r", [1, 2, 3])
def test_expu_matches_scipy(rng, r):
    # [DERIVED] oracle: scipy.linalg.expm
    a = random_antihermitian(rng, (5,), r, 2.0)
    for x, u in zip(a, expu(a)):
        assert np.allclose(u, sla.expm(x), atol=1e-13)


@pytest.mark.parametrize("r", [1, 2, 3])
def test_logu_matches_scipy(rng, r):
    # [DERIVED] oracle: scipy.linalg.logm on the principal branch
    u = random_unitary(rng, (6,), r)
    for x, v in zip(logu(u), u):
        assert np.allclose(x, sla.logm(v), atol=1e-10)


def test_logu_inverts_expu(rng):
    # [DERIVED] principal branch inverse
    a = random_antihermitian(rng, (20,), 3, 2.5)
    assert np.allclose(logu(expu(a)), a, atol=1e-11)


def test_branch_cut_rejected():
    # [TRIVIAL] branch cut detection
    u = np.diag([np.exp(1j * (np.pi - 1e-9)), 1.0])[None]
    assert branch_distance(u)[0] < 1e-6
    with pytest.raises(BranchCutError) as info:
        logu(u, labels=[7])
    assert info.value.cell == 7
    with pytest.raises(BranchCutError):
        logu(-np.ones((1, 1, 1), complex))


def test_opnorm_normal_agrees_with_opnorm(rng):
    # [DERIVED] spectral norm of normal matrices
    a = random_antihermitian(rng, (10,), 3, 1.0)
    assert np.allclose(opnorm_normal(a), opnorm(a), atol=1e-13)


def test_random_unitary_is_unitary(rng):
    # [TRIVIAL] unitarity
    u = random_unitary(rng, (8,), 4)
    assert np.allclose(dagger(u) @ u, np.eye(4), atol=1e-13)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0.01, 3.0))
def test_random_antihermitian_bounded(seed, amp):
    # [TRIVIAL] amplitude bound
    a = random_antihermitian(np.random.default_rng(seed), (4,), 2, amp)
    assert np.allclose(a, -dagger(a))
    assert np.all(opnorm(a) <= amp + 1e-12)
