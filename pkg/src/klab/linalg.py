"""Batched exp/log for small unitary matrices.

All routines act on stacks of shape ``(..., r, r)``.  The logarithm uses the
Cayley transform ``C = i (I - U)(I + U)^{-1}``, which is Hermitian for unitary
``U`` and has eigenvalues ``tan(theta / 2)``; this gives orthonormal
eigenvectors even for degenerate spectra.
"""

import numpy as np

from . import BranchCutError

#: eigenvalues closer than this to -1 are rejected by :func:`logu`
BRANCH_TOL = 1e-6


def dagger(a):
    return np.conj(np.swapaxes(a, -1, -2))


def eye_like(a):
    r = a.shape[-1]
    return np.broadcast_to(np.eye(r, dtype=complex), a.shape).copy()


def hermitian_part(a):
    return 0.5 * (a + dagger(a))


def antihermitian_part(a):
    return 0.5 * (a - dagger(a))


def opnorm(a):
    """Operator (spectral) norm over the last two axes."""
    if a.shape[-1] == 1:
        return np.abs(a[..., 0, 0])
    return np.linalg.norm(a, ord=2, axis=(-2, -1))


def opnorm_normal(a):
    """Operator norm for normal matrices (largest |eigenvalue|)."""
    if a.shape[-1] == 1:
        return np.abs(a[..., 0, 0])
    # anti-Hermitian input: i*a is Hermitian
    w = np.linalg.eigvalsh(hermitian_part(1j * a))
    return np.max(np.abs(w), axis=-1)


def expu(x):
    """exp of anti-Hermitian matrices, returned exactly unitary up to rounding."""
    x = np.asarray(x, dtype=complex)
    if x.shape[-1] == 1:
        return np.exp(1j * x.imag)
    h = hermitian_part(-1j * x)
    w, v = np.linalg.eigh(h)
    return (v * np.exp(1j * w)[..., None, :]) @ dagger(v)


def branch_distance(u):
    """Smallest |lambda + 1| over the eigenvalues of each unitary."""
    if u.shape[-1] == 1:
        return np.abs(u[..., 0, 0] + 1.0)
    return np.min(np.abs(np.linalg.eigvals(u) + 1.0), axis=-1)


def logu(u, tol=BRANCH_TOL, labels=None, kind="plaquette"):
    """Principal logarithm of unitary matrices (anti-Hermitian result).

    Raises BranchCutError naming the offending entry when an eigenvalue lies
    within ``tol`` of -1.
    """
    u = np.asarray(u, dtype=complex)
    d = branch_distance(u)
    bad = np.flatnonzero(np.ravel(d) < tol)
    if bad.size:
        i = int(bad[0])
        name = labels[i] if labels is not None else i
        raise BranchCutError(
            f"{kind} {name}: holonomy eigenvalue within {tol:g} of -1 "
            f"(distance {np.ravel(d)[i]:.3g})",
            cell=name,
            kind=kind,
        )
    if u.shape[-1] == 1:
        return 1j * np.angle(u)
    eye = eye_like(u)
    # (I - U) and (I + U) commute, so either solve order gives the Cayley map
    c = 1j * np.linalg.solve(eye + u, eye - u)
    w, v = np.linalg.eigh(hermitian_part(c))
    theta = 2.0 * np.arctan(w)
    return (v * (1j * theta)[..., None, :]) @ dagger(v)


def random_antihermitian(rng, shape, r, amplitude):
    """Gaussian anti-Hermitian matrices rescaled to operator norm <= amplitude.

    Each sample is drawn from the Gaussian ensemble and then shrunk (never
    grown) so its operator norm does not exceed ``amplitude``.
    """
    g = rng.standard_normal(shape + (r, r)) + 1j * rng.standard_normal(shape + (r, r))
    a = antihermitian_part(g)
    n = opnorm_normal(a)
    n = np.where(n > 0, n, 1.0)
    scale = np.minimum(1.0, amplitude / n) if amplitude > 0 else np.zeros_like(n)
    return a * scale[..., None, None]


def random_unitary(rng, shape, r):
    """Haar-random unitaries via QR of a complex Ginibre matrix."""
    z = (rng.standard_normal(shape + (r, r)) + 1j * rng.standard_normal(shape + (r, r))) / np.sqrt(2)
    q, rr = np.linalg.qr(z)
    d = np.diagonal(rr, axis1=-2, axis2=-1)
    ph = d / np.abs(d)
    return q * ph[..., None, :]
