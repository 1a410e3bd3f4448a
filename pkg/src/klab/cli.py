"""Command-line entry point: ``klab <command> ...``.

Exit codes: 0 pass, 1 assertion failure, 2 input error, 3 numerical-domain
error (branch cut or sector escape).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import (BranchCutError, ConfigurationError, GluingError, KlabError, PlanError,
               PreconditionError, SectorEscapeError, __version__)
from . import bundle as bd
from . import chern as ch
from . import karea as ka
from . import surgery as sg
from . import trivialize as tv
from .mesh import (connected_sum, gen_mesh, load_mesh, save_mesh, scale_metric, sphere,
                   surgery, torus, torus_loop_plan)
from .mesh.rewrite import SurgeryPlan

OUT_ENV = "KLAB_OUT"
EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3


class InputError(KlabError):
    pass


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if np.isfinite(v) else str(v)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2)


def out_dir(args) -> Path:
    d = Path(args.out or os.environ.get(OUT_ENV, "."))
    d.mkdir(parents=True, exist_ok=True)
    return d


def emit(args, name, report):
    text = dumps(report)
    if args.out or os.environ.get(OUT_ENV):
        path = out_dir(args) / name
        path.write_text(text + "\n")
    print(text)


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc


def mesh_arg(spec):
    """A mesh file path or an inline generator spec (JSON object)."""
    if isinstance(spec, dict):
        return gen_mesh(spec)
    if isinstance(spec, str) and spec.lstrip().startswith("{"):
        return gen_mesh(json.loads(spec))
    if not Path(spec).exists():
        raise InputError(f"mesh file {spec} does not exist")
    return load_mesh(spec)


def check(value, tol, ok, **extra):
    return {"value": value, "tolerance": tol, "pass": bool(ok), **extra}


# ---------------------------------------------------------------------------
# experiments


def _exp_scaling(p, seed):
    m = mesh_arg(p.get("mesh", {"generator": "torus", "n": 8}))
    c = float(p.get("c", 2.0))
    sector = tuple(p.get("sector", (1, 1)))
    cfg = ka.OptimizerConfig(seed=seed, max_iters=int(p.get("max_iters", 5000)))
    rep = ka.scaling_experiment(m, c, sector, cfg, float(p.get("perturbation", 0.05)))
    tol = float(p.get("tolerance", 1e-3))
    return {"mesh_hash": m.hash, "report": rep,
            "checks": {"ratio": check(rep["ratio"], tol, abs(rep["ratio"] - c * c) <= tol * c * c, expected=c * c)}}


def _exp_covering(p, seed):
    m = mesh_arg(p.get("mesh", {"generator": "torus", "n": 8}))
    factors = tuple(p.get("factors", (2, 2)))
    cfg = ka.OptimizerConfig(seed=seed, max_iters=int(p.get("max_iters", 5000)))
    rep = ka.covering_experiment(m, factors, tuple(p.get("sector", (1, 1))), cfg, float(p.get("perturbation", 0.05)))
    tol = float(p.get("tolerance", 0.01))
    return {"mesh_hash": m.hash, "report": rep,
            "checks": {"ratio": check(rep["ratio"], tol, abs(rep["ratio"] - rep["expected"]) <= tol * rep["expected"],
                                      expected=rep["expected"]),
                       "direct_image_monotone": check(rep["direct_image_monotone"], 1e-12, rep["direct_image_monotone"])}}


def _exp_bookkeeping(p, seed):
    n = int(p.get("n", 8))
    t = torus(n)
    ms = surgery(t, torus_loop_plan(t))
    b = bd.perturbed_flat(ms, float(p.get("delta", 0.01)), int(p.get("rank", 1)), seed)
    res = sg.transplant(b, float(p.get("eps0", 0.05)))
    tol = float(p.get("tolerance", 1e-6))
    if isinstance(res, tv.Obstruction):
        return {"mesh_hash": ms.hash, "report": res.as_dict(),
                "checks": {"transplant": check(res.kind, None, False)}}
    return {"mesh_hash": ms.hash, "report": res.as_dict(),
            "checks": {"identity_residual": check(res.identity_residual, tol, res.identity_residual <= tol)}}


def _scan_report(m, seed, tol):
    scan = sg.threshold_scan(m, sg.default_corpus(m, seed=seed), tol)
    rows = [{"label": a, "sup_norm": s, "totals": t} for a, s, t in scan.rows]
    return scan, rows


def _exp_threshold(p, seed):
    m = mesh_arg(p.get("mesh", {"generator": "sphere", "n": 8}))
    tol = float(p.get("tolerance", 1e-6))
    scan, rows = _scan_report(m, seed, tol)
    return {"mesh_hash": m.hash, "report": {"delta_star": scan.delta_star, "rows": rows},
            "checks": {"delta_star_positive": check(scan.delta_star, 0.0, scan.delta_star > 0),
                       "below_threshold_trivial": check(scan.ok, tol, scan.ok)}}


def _exp_cylinder_cap(p, seed):
    """Capped sphere vs the same sphere with a long cylindrical neck to a second cap."""
    n = int(p.get("n", 4))
    length = int(p.get("neck_levels", 16))
    tol = float(p.get("tolerance", 1e-6))
    capped = sphere(n)
    necked = connected_sum(sphere(n), sphere(n), 0, 0, collar_levels=length)
    out, checks = {}, {}
    for name, m in (("capped", capped), ("long_cylinder", necked)):
        scan, rows = _scan_report(m, seed, tol)
        out[name] = {"mesh_hash": m.hash, "area": m.total_volume(), "delta_star": scan.delta_star, "rows": rows}
        checks[f"{name}_finite_threshold"] = check(scan.delta_star, 0.0, 0 < scan.delta_star < np.inf and scan.ok)
    return {"report": out, "checks": checks}


EXPERIMENTS = {
    "scaling": _exp_scaling,
    "torus-covering": _exp_covering,
    "surgery-bookkeeping": _exp_bookkeeping,
    "trivialize-threshold": _exp_threshold,
    "cylinder-cap": _exp_cylinder_cap,
}


def run_experiment(spec: dict, seed_override=None):
    if not isinstance(spec, dict) or "name" not in spec:
        raise InputError("experiment spec needs a 'name'")
    name = spec["name"]
    if name not in EXPERIMENTS:
        raise InputError(f"unknown experiment {name!r}; known: {sorted(EXPERIMENTS)}")
    unknown = set(spec) - {"name", "params", "seed", "output", "inputs", "tolerances"}
    if unknown:
        raise InputError(f"unknown spec fields {sorted(unknown)}")
    params = dict(spec.get("inputs", {}))
    params.update(spec.get("params", {}))
    params.update(spec.get("tolerances", {}))
    seed = int(spec.get("seed", 0) if seed_override is None else seed_override)
    body = EXPERIMENTS[name](params, seed)
    passed = all(c["pass"] for c in body["checks"].values())
    return {"experiment": name, "version": __version__, "seed": seed, "params": params,
            "pass": passed, **body}


# ---------------------------------------------------------------------------
# commands


def cmd_mesh(args):
    if args.action == "gen":
        spec = json.loads(args.spec)
        m = gen_mesh(spec)
        if args.scale != 1.0:
            m = scale_metric(m, args.scale)
        path = out_dir(args) / (args.name or f"{spec.get('generator', 'mesh')}.mesh.json")
        save_mesh(m, path)
        emit(args, "mesh-info.json", _mesh_info(m) | {"path": str(path)})
    else:
        emit(args, "mesh-info.json", _mesh_info(mesh_arg(args.mesh)))
    return EXIT_OK


def _mesh_info(m):
    return {"dim": m.dim, "f_vector": list(m.f_vector), "euler_characteristic": m.euler_characteristic(),
            "betti": list(m.betti_numbers()), "closed": m.is_closed(), "volume": m.total_volume(),
            "hash": m.hash, "regions": sorted(m.regions)}


def _load_bundle(args, m):
    if not Path(args.bundle).exists():
        raise InputError(f"bundle file {args.bundle} does not exist")
    return bd.load_bundle(args.bundle, m)


def cmd_bundle(args):
    m = mesh_arg(args.mesh)
    if args.action == "monopole":
        fl = [int(x) for x in args.flux.split(",")]
        b = bd.monopole_bundle(m, fl[0] if len(fl) == 1 else fl)
    elif args.action == "trivial":
        b = bd.trivial_bundle(m, args.rank)
    elif args.action == "flat":
        b = bd.perturbed_flat(m, args.delta, args.rank, args.seed)
    else:
        b = _load_bundle(args, m)
        if args.action == "perturb":
            b = bd.perturb(b, args.amplitude, args.seed)
        else:
            c = bd.curvature(b)
            emit(args, "curvature.json", {"sup_norm": c.sup_norm, "argmax_plaquette": c.argmax_plaquette,
                                          "mesh_hash": m.hash})
            return EXIT_OK
    path = out_dir(args) / (args.name or "bundle.json")
    bd.save_bundle(b, path)
    emit(args, "bundle-info.json", {"path": str(path), "rank": b.rank, "mesh_hash": m.hash,
                                    "sup_norm": bd.curvature(b).sup_norm})
    return EXIT_OK


def cmd_chern(args):
    m = mesh_arg(args.mesh)
    b = _load_bundle(args, m)
    rep = ch.chern_densities(b)
    poly = ch.parse_polynomial(args.poly, m.dim)
    d = rep.as_dict(with_densities=args.densities)
    d["polynomial"] = str(poly)
    d["value"] = ch.chern_number(b, poly, rep)
    emit(args, "chern.json", d)
    return EXIT_OK


def cmd_trivialize(args):
    m = mesh_arg(args.mesh)
    b = _load_bundle(args, m)
    res = tv.trivialize(b, args.eps)
    emit(args, "trivialize.json", res.as_dict() | {"mesh_hash": m.hash, "eps": args.eps})
    return EXIT_OK if isinstance(res, tv.FrameCertificate) else EXIT_FAIL


def cmd_collar(args):
    m = mesh_arg(args.mesh)
    if m.collar is None:
        raise InputError("mesh has no collar")
    b = _load_bundle(args, m)
    prof = tv.default_profile()
    if args.chi:
        d = read_json(args.chi)
        prof = tv.CutoffProfile(tuple(d["t"]), tuple(d["chi"]))
    col = m.collar
    cert = tv.trivialize(bd.restrict(b, col.slice, col.vertex_index[:, -1]), 1.0)
    if isinstance(cert, tv.Obstruction):
        emit(args, "collar.json", cert.as_dict())
        return EXIT_FAIL
    ext = tv.collar_extend(b, cert.gauge, prof, args.eps0)
    emb = ext.bundle
    save_mesh(emb.base, out_dir(args) / "extended.mesh.json")
    bd.save_bundle(emb, out_dir(args) / "extended.bundle.json")
    c_in, c_out = bd.curvature(b).sup_norm, bd.curvature(emb).sup_norm
    bound = 1.05 * (c_in + args.eps0 + args.eps0 ** 2)
    emit(args, "collar.json", {"input_sup_norm": c_in, "output_sup_norm": c_out,
                               "certificate": cert.as_dict(),
                               "checks": {"curvature": check(c_out, bound, c_out <= bound)}})
    return EXIT_OK if c_out <= bound else EXIT_FAIL


def cmd_surgery(args):
    m = mesh_arg(args.mesh)
    if args.action == "apply":
        plan = SurgeryPlan.from_json(read_json(args.plan)) if args.plan else torus_loop_plan(m)
        out = surgery(m, plan)
        path = out_dir(args) / (args.name or "surgered.mesh.json")
        save_mesh(out, path)
        emit(args, "surgery.json", _mesh_info(out) | {"path": str(path)})
        return EXIT_OK
    b = _load_bundle(args, m)
    res = sg.transplant(b, args.eps0)
    emit(args, "transplant.json", res.as_dict())
    return EXIT_OK if isinstance(res, sg.TransplantResult) else EXIT_FAIL


def _cfg(args):
    d = read_json(args.config) if getattr(args, "config", None) else {}
    d.setdefault("seed", args.seed)
    try:
        return ka.OptimizerConfig(**d)
    except TypeError as exc:
        raise InputError(f"bad optimizer config: {exc}") from exc


def _sector(text):
    rank, _, flux = text.partition(":")
    fl = [int(x) for x in flux.split(",")] if flux else [1]
    return int(rank), fl[0] if len(fl) == 1 else tuple(fl)


def cmd_karea(args):
    m = mesh_arg(args.mesh)
    cfg = _cfg(args)
    if args.action == "optimize":
        sectors = [_sector(s) for s in args.sector]
        best, results, errors = ka.karea_lower_bound(m, sectors, cfg, args.perturbation)
        report = {"best": best.as_dict(), "mesh_hash": m.hash,
                  "sectors": [{"sector": list(s) if isinstance(s, tuple) else s, **e.as_dict(with_trace=True)}
                              for s, e in results],
                  "errors": [[list(s), msg] for s, msg in errors]}
        if args.csv:
            with open(out_dir(args) / args.csv, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["iteration", "objective"])
                for i, v in enumerate(best.trace):
                    w.writerow([i, repr(v)])
        emit(args, "karea.json", report)
        return EXIT_OK
    if args.action == "scaling":
        rep = ka.scaling_experiment(m, args.c, _sector(args.sector[0]), cfg, args.perturbation)
    else:
        rep = ka.covering_experiment(m, tuple(int(x) for x in args.factors.split(",")),
                                     _sector(args.sector[0]), cfg, args.perturbation)
    emit(args, f"karea-{args.action}.json", rep)
    return EXIT_OK if rep["ok"] else EXIT_FAIL


def cmd_experiment(args):
    spec = read_json(args.spec)
    report = run_experiment(spec, args.seed if args.seed_given else None)
    name = spec.get("output") or f"{spec['name']}.report.json"
    emit(args, name, report)
    if not report["pass"]:
        first = next(k for k, c in report["checks"].items() if not c["pass"])
        print(f"check failed: {first}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="klab", description="Numerical K-area laboratory")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or .)")
    ap.add_argument("--threads", type=int, default=None, help="cap on BLAS worker threads")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mesh")
    p.add_argument("action", choices=["gen", "info"])
    p.add_argument("--spec", default='{"generator": "torus", "n": 8}')
    p.add_argument("--mesh")
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--name")
    p.set_defaults(func=cmd_mesh)

    p = sub.add_parser("bundle")
    p.add_argument("action", choices=["monopole", "trivial", "flat", "perturb", "curvature"])
    p.add_argument("--mesh", required=True)
    p.add_argument("--bundle")
    p.add_argument("--flux", default="1")
    p.add_argument("--rank", type=int, default=1)
    p.add_argument("--delta", type=float, default=0.01)
    p.add_argument("--amplitude", type=float, default=0.1)
    p.add_argument("--name")
    p.set_defaults(func=cmd_bundle)

    p = sub.add_parser("chern")
    p.add_argument("action", choices=["eval"])
    p.add_argument("--mesh", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--poly", default="c1")
    p.add_argument("--densities", action="store_true")
    p.set_defaults(func=cmd_chern)

    p = sub.add_parser("trivialize")
    p.add_argument("--mesh", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--eps", type=float, required=True)
    p.set_defaults(func=cmd_trivialize)

    p = sub.add_parser("collar")
    p.add_argument("action", choices=["extend"])
    p.add_argument("--mesh", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--eps0", type=float, default=0.05)
    p.add_argument("--chi", help="JSON file with sample arrays 't' and 'chi'")
    p.set_defaults(func=cmd_collar)

    p = sub.add_parser("surgery")
    p.add_argument("action", choices=["apply", "transplant"])
    p.add_argument("--mesh", required=True)
    p.add_argument("--plan")
    p.add_argument("--bundle")
    p.add_argument("--eps0", type=float, default=0.05)
    p.add_argument("--name")
    p.set_defaults(func=cmd_surgery)

    p = sub.add_parser("karea")
    p.add_argument("action", choices=["optimize", "scaling", "covering"])
    p.add_argument("--mesh", required=True)
    p.add_argument("--sector", action="append", default=None, help="rank:flux[,flux] (repeatable)")
    p.add_argument("--config")
    p.add_argument("--perturbation", type=float, default=0.0)
    p.add_argument("--c", type=float, default=2.0)
    p.add_argument("--factors", default="2,2")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_karea)

    p = sub.add_parser("experiment")
    p.add_argument("action", choices=["run", "list"])
    p.add_argument("spec", nargs="?")
    p.set_defaults(func=cmd_experiment_dispatch)
    return ap


def cmd_experiment_dispatch(args):
    if args.action == "list":
        print("\n".join(sorted(EXPERIMENTS)))
        return EXIT_OK
    if not args.spec:
        raise InputError("experiment run needs a spec file")
    return cmd_experiment(args)


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = 0
    if getattr(args, "sector", "x") is None:
        args.sector = ["1:1"]
    if args.threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        return args.func(args)
    except (InputError, ConfigurationError, GluingError, PlanError, PreconditionError,
            ValueError, KeyError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (BranchCutError, SectorEscapeError) as exc:
        print(f"numerical-domain error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
