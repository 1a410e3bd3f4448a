"""K-area lower bounds by curvature minimization inside a topological sector.

The objective is the power mean ``(sum_p w_p tr (iF_p)^s)^(1/s)`` over
plaquettes (weights w_p = area fraction), a smooth stand-in for the sup norm
of the field strength F_p = log(holonomy_p) / area_p.  Descent moves every
edge by exp(X_e); steps that raise the objective or move the Chern totals
off their starting integers are halved.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import BranchCutError, ConfigurationError, PreconditionError, SectorEscapeError
from .bundle import (Bundle, curvature, direct_image, direct_sum, monopole_bundle, oriented,
                     perturb, trivial_bundle)
from .chern import chern_densities, in_k_cross
from .linalg import dagger, expu, logu, opnorm
from .mesh import Mesh
from .mesh.rewrite import covering, scale_metric


@dataclass(frozen=True)
class OptimizerConfig:
    s: int = 8
    step: float = 0.05
    grow: float = 1.5
    max_step: float = 0.5
    min_step: float = 1e-12
    max_iters: int = 5000
    guard_tol: float = 1e-6
    rel_tol: float = 1e-13
    seed: int = 0

    def __post_init__(self):
        if self.s < 2 or self.s % 2:
            raise ConfigurationError("soft-max exponent must be an even integer >= 2")
        if not (self.step > 0 and self.max_step > 0 and self.min_step > 0 and self.grow >= 1):
            raise ConfigurationError("step sizes must be positive")
        if self.max_iters < 0:
            raise ConfigurationError("max_iters must be non-negative")


@dataclass(frozen=True, eq=False)
class KareaEstimate:
    lower_bound: float
    sup_norm: float
    bundle: Bundle = field(repr=False)
    trace: list = field(repr=False)  # soft-max objective per accepted iterate
    sector_start: dict = field(default_factory=dict)
    sector_end: dict = field(default_factory=dict)
    iterations: int = 0
    rejected: int = 0
    sector_escapes: int = 0

    def as_dict(self, with_trace=False):
        d = {"lower_bound": self.lower_bound, "sup_norm": self.sup_norm,
             "sector_start": self.sector_start, "sector_end": self.sector_end,
             "iterations": self.iterations, "rejected": self.rejected,
             "sector_escapes": self.sector_escapes}
        if with_trace:
            d["trace"] = list(self.trace)
        return d


class _Problem:
    def __init__(self, m: Mesh, rank: int, s: int):
        self.m = m
        self.r = rank
        self.s = s
        self.pe, self.ps = m.plaquette_cycles
        self.area = m.plaquette_area
        self.w = self.area / self.area.sum()

    def factors(self, t):
        return [oriented(t[self.pe[:, j]], self.ps[:, j]) for j in range(4)]

    def evaluate(self, t):
        """Soft-max objective, plaquette logs and factors (raises on the branch cut)."""
        f = self.factors(t)
        h = f[3] @ f[2] @ f[1] @ f[0]
        lg = logu(h, labels=np.arange(len(h)))
        herm = 1j * lg / self.area[:, None, None]
        ev = np.linalg.eigvalsh(herm) if self.r > 1 else herm[:, 0, 0].real[:, None]
        js = float(np.sum(self.w * np.sum(ev ** self.s, axis=1)))
        return js ** (1.0 / self.s), lg, f, herm

    def sector(self, t, lg=None):
        if self.m.dim == 2 and lg is not None:
            return {"c1": float(np.sum(np.real(1j * np.trace(lg, axis1=1, axis2=2))) / (2 * np.pi))}
        if self.m.dim in (2, 4):
            return chern_densities(Bundle(self.m, t)).totals
        return {}

    def gradient(self, t, f, herm):
        """Gradient of sum_p w_p tr (iF_p)^s in the Lie algebra of each edge (first order in log)."""
        g = np.linalg.matrix_power(herm, self.s - 1)
        coef = self.s * self.w / self.area
        suffix = [None] * 4
        suffix[3] = np.broadcast_to(np.eye(self.r, dtype=complex), f[0].shape)
        for j in (2, 1, 0):
            suffix[j] = suffix[j + 1] @ f[j + 1]
        grad = np.zeros_like(t)
        for j in range(4):
            q = np.where((self.ps[:, j] > 0)[:, None, None], suffix[j], suffix[j] @ f[j])
            k = 1j * (dagger(q) @ g @ q)
            contrib = -(coef * self.ps[:, j])[:, None, None] * k
            np.add.at(grad, self.pe[:, j], contrib)
        return grad


def _sector_ok(sec, target, tol):
    return all(abs(sec[k] - target[k]) <= tol for k in target)


def minimize_curvature(m: Mesh, start: Bundle, cfg: OptimizerConfig | None = None) -> KareaEstimate:
    cfg = cfg or OptimizerConfig()
    if start.base is not m and start.base.hash != m.hash:
        raise ConfigurationError("start bundle lives on a different mesh")
    verdict = in_k_cross(start, tol=cfg.guard_tol)
    if not verdict.admissible:
        raise PreconditionError(f"start bundle is not admissible: {verdict.reason}")
    prob = _Problem(m, start.rank, cfg.s)
    t = start.transport.copy()
    obj, lg, f, herm = prob.evaluate(t)
    sec0 = prob.sector(t, lg)
    target = {k: float(round(v)) for k, v in sec0.items()}
    if not _sector_ok(sec0, target, cfg.guard_tol):
        raise PreconditionError(f"start totals {sec0} are not within guard tolerance of integers")
    trace = [obj]
    step = cfg.step
    rejected = 0
    it = 0
    for it in range(1, cfg.max_iters + 1):
        grad = prob.gradient(t, f, herm)
        gn = float(np.max(opnorm(grad))) if len(grad) else 0.0
        if gn == 0.0:
            break
        accepted = False
        guard_trips = 0
        while step >= cfg.min_step:
            x = -step * grad / gn
            tn = expu(x) @ t
            try:
                objn, lgn, fn, hn = prob.evaluate(tn)
                secn = prob.sector(tn, lgn)
                in_sector = _sector_ok(secn, target, cfg.guard_tol)
            except BranchCutError:
                in_sector = False
            if not in_sector:
                guard_trips += 1
                rejected += 1
                step /= 2
                continue
            if objn > obj:
                rejected += 1
                step /= 2
                continue
            accepted = True
            break
        if not accepted:
            if guard_trips and step < cfg.min_step and guard_trips == rejected:
                raise SectorEscapeError("sector guard tripped at every step size")
            break
        improvement = obj - objn
        t, obj, lg, f, herm = tn, objn, lgn, fn, hn
        trace.append(obj)
        step = min(step * cfg.grow, cfg.max_step)
        if improvement <= cfg.rel_tol * obj:
            break
    out = Bundle(m, t, start.flat_regions)
    sup = curvature(out).sup_norm
    sec1 = prob.sector(t, lg)
    escapes = 0 if _sector_ok(sec1, target, cfg.guard_tol) else 1
    return KareaEstimate(1.0 / sup if sup > 0 else float("inf"), sup, out, trace, sec0, sec1, it,
                         rejected, escapes)


def sector_bundle(m: Mesh, rank: int, flux, perturbation=0.0, seed=0) -> Bundle:
    """Monopole of the given flux plus a trivial summand up to ``rank``, optionally perturbed."""
    if rank < 1:
        raise ConfigurationError("rank must be positive")
    b = monopole_bundle(m, flux)
    if rank > 1:
        b = direct_sum(b, trivial_bundle(m, rank - 1))
    if perturbation:
        b = perturb(b, perturbation, seed)
    return b


def karea_lower_bound(m: Mesh, sectors, cfg: OptimizerConfig | None = None, perturbation=0.0):
    """Best estimate over sectors given as (rank, flux) pairs."""
    cfg = cfg or OptimizerConfig()
    if not sectors:
        raise ConfigurationError("no sectors given")
    results, errors = [], []
    for rank, flux in sectors:
        try:
            start = sector_bundle(m, rank, flux, perturbation, cfg.seed)
            results.append(((rank, flux), minimize_curvature(m, start, cfg)))
        except (PreconditionError, SectorEscapeError, BranchCutError, ConfigurationError) as exc:
            errors.append(((rank, flux), str(exc)))
    if not results:
        raise PreconditionError(f"all sectors failed: {errors}")
    best = max(results, key=lambda x: x[1].lower_bound)
    return best[1], results, errors


def scaling_experiment(m: Mesh, c: float, sector=(1, 1), cfg=None, perturbation=0.0):
    cfg = cfg or OptimizerConfig()
    b0, _, _ = karea_lower_bound(m, [sector], cfg, perturbation)
    b1, _, _ = karea_lower_bound(scale_metric(m, c), [sector], cfg, perturbation)
    ratio = b1.lower_bound / b0.lower_bound
    return {"c": c, "base": b0.lower_bound, "scaled": b1.lower_bound, "ratio": ratio,
            "expected": c * c, "ok": abs(ratio - c * c) <= 1e-3 * c * c}


def covering_experiment(m: Mesh, factors, sector=(1, 1), cfg=None, perturbation=0.0):
    """Lower bounds on a torus and its covering torus; total/base should equal the sheet count."""
    cfg = cfg or OptimizerConfig()
    cov = covering(m, factors)
    base, _, _ = karea_lower_bound(m, [sector], cfg, perturbation)
    total, _, _ = karea_lower_bound(cov.total, [sector], cfg, perturbation)
    ratio = total.lower_bound / base.lower_bound
    push = direct_image(total.bundle, cov)
    mono = curvature(push).sup_norm <= total.sup_norm + 1e-12
    return {"factors": list(factors), "sheets": cov.sheets, "base": base.lower_bound,
            "total": total.lower_bound, "ratio": ratio, "expected": float(cov.sheets),
            "direct_image_monotone": bool(mono),
            "ok": abs(ratio - cov.sheets) <= 0.01 * cov.sheets and mono}
