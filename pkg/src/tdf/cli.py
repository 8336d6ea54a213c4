"""Command-line interface: ``tdf {rank|hosvd|project|evolve|norms}``.

All JSON goes to stdout, logs to stderr. Exit codes: 0 success, 2 I/O
error, 3 malformed input or invalid configuration, 4 projection solver
failure, 5 rank degeneracy, 6 norm-domination invariant falsified.
"""

import argparse
import json
import logging
import math
import sys

import numpy as np

from . import dynamics as dyn
from .errors import MaxIterationsExceeded, NotMinimalError, RankDegeneracy, TDFError, TensorFormatError
from .geometry import make_base
from .projection import injective_norm, project_generalized_lp, project_hilbert, project_metric_lp
from .rng import make_rng, resolve_seed
from .tensor import AmbientNorm, elementary_tensor, read_tensor
from .tucker import (
    DEFAULT_RANK_TOL,
    alpha_rank,
    hosvd,
    is_admissible,
    matrix_from_dict,
    random_tucker,
    read_tucker,
    to_tucker,
    tucker_to_dict,
    tucker_to_dense,
)

log = logging.getLogger("tdf")

EXIT_OK, EXIT_IO, EXIT_FORMAT, EXIT_SOLVER, EXIT_RANK, EXIT_INVARIANT = 0, 2, 3, 4, 5, 6

CSV_HELP = """\
trajectory CSV columns: step, t, then per-method diagnostics.
  hartree: lambda, lambda_closed (closed-form exponential check), lambda_rel_dev,
           energy <A(x)v,(x)v>, norm_drift (before renormalization),
           tangency max|<v_a', v_a>|, ref_error
  dlra:    galerkin_residual (max over RK stages), iterations (projector),
           core_smin_<a> (smallest core singular value per mode), ref_error
"""


class ConfigError(ValueError):
    pass


def _emit(obj):
    sys.stdout.write(json.dumps(obj) + "\n")


def _norm_for(order, p, weights=None):
    return AmbientNorm.lp(order, p, weights)


# -- rank / hosvd / norms / project ----------------------------------------

def cmd_rank(args):
    t = read_tensor(args.input)
    if not np.any(t):
        ranks = [0] * t.ndim
    else:
        ranks = [alpha_rank(t, a, args.tol) for a in range(t.ndim)]
    _emit({"ranks": ranks, "tol": args.tol})
    return EXIT_OK


def cmd_hosvd(args):
    t = read_tensor(args.input)
    if args.rank:
        rank = _parse_ints(args.rank)
        if not is_admissible(rank, t.shape):
            raise ConfigError(f"rank {rank} is not admissible for shape {list(t.shape)}")
        u, _ = hosvd(t, rank)
    else:
        u = to_tucker(t, args.tol)
    rel = float(np.linalg.norm(tucker_to_dense(u) - t) / np.linalg.norm(t))
    log.info("rank %s, relative truncation error %.3e", list(u.rank), rel)
    obj = tucker_to_dict(u)
    if args.output:
        with open(args.output, "w") as fh:
            json.dump(obj, fh)
            fh.write("\n")
        _emit({"rank": list(u.rank), "relative_error": rel, "output": args.output})
    else:
        _emit(obj)
    return EXIT_OK


def cmd_norms(args):
    t = read_tensor(args.input)
    nrm = _norm_for(t.ndim, args.p)
    ambient = nrm(t)
    if ambient == 0.0:
        _emit({"ambient": 0.0, "injective_lb": 0.0, "dominated": True})
        return EXIT_OK
    est = injective_norm(t, nrm, restarts=args.restarts, seed=args.seed)
    dominated = bool(est.lower_bound <= ambient * (1 + 1e-12))
    _emit({"ambient": ambient, "injective_lb": est.lower_bound, "dominated": dominated})
    if not dominated:
        log.error("injective lower bound %.17g exceeds the ambient norm %.17g", est.lower_bound, ambient)
        return EXIT_INVARIANT
    return EXIT_OK


def cmd_project(args):
    g = read_tensor(args.input)
    v = read_tucker(args.base)
    if v.shape != g.shape:
        raise TensorFormatError(f"base has shape {list(v.shape)}, input has shape {list(g.shape)}")
    b = make_base(v)
    nrm = _norm_for(g.ndim, args.p)
    try:
        if args.projector == "hilbert":
            report = project_hilbert(b, g)
        elif args.projector == "metric":
            report = project_metric_lp(b, g, nrm, tol=args.tol, max_iter=args.max_iter)
        else:
            report = project_generalized_lp(b, g, nrm, tol=args.tol, max_iter=args.max_iter)
    except MaxIterationsExceeded as exc:
        log.error("%s", exc)
        _emit(exc.report.to_dict())
        return EXIT_SOLVER
    _emit(report.to_dict())
    if report.duality_residual > args.tol:
        log.error("duality residual %.3e exceeds tol %g", report.duality_residual, args.tol)
        return EXIT_SOLVER
    return EXIT_OK


# -- evolve -----------------------------------------------------------------

PRESETS = ("identity", "kronecker-laplacian", "random-symmetric")
DEFAULT_INITIAL = {"identity": "separable", "kronecker-laplacian": "tucker", "random-symmetric": "random"}


def _parse_ints(text):
    try:
        return [int(x) for x in str(text).replace(" ", "").split(",") if x]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


def load_config(path, overrides):
    """Read the JSON config, apply command-line overrides and validate."""
    with open(path) as fh:
        text = fh.read()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    integ = cfg.setdefault("integrator", {})
    out = cfg.setdefault("output", {})
    for key in ("T", "dt", "projector", "method"):
        if overrides.get(key) is not None:
            integ[key] = overrides[key]
    for key in ("csv", "json"):
        if overrides.get(key) is not None:
            out[key] = overrides[key]
    if overrides.get("dump_states"):
        out["dump_states"] = True
    if overrides.get("seed") is not None:
        cfg["seed"] = overrides["seed"]
    if overrides.get("reference") is not None:
        cfg["reference"] = overrides["reference"]
    return validate_config(cfg)


def validate_config(cfg):
    cfg = dict(cfg)
    cfg["seed"] = resolve_seed(cfg.get("seed"))
    problem = cfg.get("problem", "identity")
    if isinstance(problem, str) and problem not in PRESETS:
        raise ConfigError(f"unknown problem preset {problem!r}; expected one of {PRESETS} or {{\"file\": ...}}")
    if isinstance(problem, dict) and "file" not in problem:
        raise ConfigError('operator file problem needs a "file" entry')
    cfg["problem"] = problem
    shape = cfg.get("shape")
    if not isinstance(shape, list) or len(shape) < 2 or not all(isinstance(n, int) and n >= 1 for n in shape):
        raise ConfigError(f"shape must be a list of >= 2 positive integers, got {shape!r}")
    rank = cfg.get("rank", [1] * len(shape))
    if not isinstance(rank, list) or not is_admissible(rank, shape):
        raise ConfigError(f"rank {rank!r} is not admissible for shape {shape}")
    cfg["rank"] = rank
    norm = cfg.get("norm") or {}
    p = float(norm.get("p", 2.0))
    if not 1.0 < p < math.inf:
        raise ConfigError(f"norm exponent must satisfy 1 < p < inf, got {p}")
    weights = norm.get("weights")
    if weights is not None and (len(weights) != len(shape)
                                or any(len(w) != n for w, n in zip(weights, shape))):
        raise ConfigError("norm weights must be one list per mode of matching length")
    cfg["norm"] = {"p": p, "weights": weights}
    integ = dict(cfg.get("integrator") or {})
    T, dt = float(integ.get("T", 1.0)), float(integ.get("dt", 1e-3))
    if not (T > 0 and dt > 0 and math.isfinite(T) and math.isfinite(dt)):
        raise ConfigError(f"integrator needs T > 0 and dt > 0, got T={T}, dt={dt}")
    projector = integ.get("projector", "hilbert")
    if projector not in dyn.PROJECTORS:
        raise ConfigError(f"unknown projector {projector!r}; expected one of {dyn.PROJECTORS}")
    method = integ.get("method", "auto")
    if method == "auto":
        method = "hartree" if all(r == 1 for r in rank) and projector == "hilbert" and p == 2.0 else "dlra"
    if method not in ("hartree", "dlra"):
        raise ConfigError(f"unknown method {method!r}; expected 'hartree', 'dlra' or 'auto'")
    if method == "hartree" and (any(r != 1 for r in rank) or projector != "hilbert"):
        raise ConfigError("the hartree method needs rank (1,...,1) and the hilbert projector")
    cfg["integrator"] = {"T": T, "dt": dt, "projector": projector, "method": method,
                         "tol": float(integ.get("tol", 1e-8))}
    initial = cfg.get("initial") or (DEFAULT_INITIAL.get(problem, "random") if isinstance(problem, str) else "random")
    if isinstance(initial, str) and initial not in ("separable", "tucker", "random"):
        raise ConfigError(f"unknown initial state {initial!r}")
    cfg["initial"] = initial
    cfg["reference"] = bool(cfg.get("reference", True))
    out = dict(cfg.get("output") or {})
    cfg["output"] = {"csv": out.get("csv"), "json": out.get("json"),
                     "dump_states": bool(out.get("dump_states", False))}
    return cfg


def read_operator(path):
    with open(path) as fh:
        obj = json.load(fh)
    try:
        terms = [[matrix_from_dict(m) for m in term] for term in obj["terms"]]
    except (KeyError, TypeError):
        raise TensorFormatError('operator file needs {"terms": [[matrix, ...], ...]}') from None
    return dyn.KroneckerSumOperator(tuple(tuple(t) for t in terms))


def build_problem(cfg):
    """Operator and initial data ``(A, u0 dense, v0 reduced)`` from a validated config."""
    shape, rank = tuple(cfg["shape"]), tuple(cfg["rank"])
    rng = make_rng(cfg["seed"])
    problem = cfg["problem"]
    if problem == "identity":
        A = dyn.KroneckerSumOperator.identity(shape)
    elif problem == "kronecker-laplacian":
        A = dyn.KroneckerSumOperator.laplacian(shape)
    elif problem == "random-symmetric":
        A = dyn.KroneckerSumOperator.random_symmetric(rng, shape)
    else:
        A = read_operator(problem["file"])
    if A.shape != shape:
        raise ConfigError(f"operator acts on shape {list(A.shape)}, config shape is {list(shape)}")
    initial = cfg["initial"]
    if isinstance(initial, dict):
        u0 = read_tensor(initial["file"])
    elif initial == "separable":
        vs = [rng.standard_normal(n) for n in shape]
        u0 = elementary_tensor([v / np.linalg.norm(v) for v in vs])
    elif initial == "tucker":
        u = random_tucker(rng, shape, rank)
        u0 = tucker_to_dense(u)
        u0 = u0 / np.linalg.norm(u0)
    else:
        u0 = rng.standard_normal(shape)
        u0 = u0 / np.linalg.norm(u0)
    if u0.shape != shape:
        raise ConfigError(f"initial tensor has shape {list(u0.shape)}, config shape is {list(shape)}")
    v0, _ = hosvd(u0, rank)
    return A, u0, v0


def _hartree_state(v0):
    # positive lambda: a negative core sign moves onto the first factor
    core = float(v0.core.ravel()[0])
    factors = [f[:, 0] for f in v0.factors]
    if core < 0:
        core, factors[0] = -core, -factors[0]
    return dyn.HartreeState(core, tuple(factors))


def run_evolve(cfg, dt=None, reference=True):
    A, u0, v0 = build_problem(cfg)
    integ = cfg["integrator"]
    T, dt = integ["T"], dt or integ["dt"]
    ref = dyn.reference_solve(A, u0, T, dt) if reference else None
    if integ["method"] == "hartree":
        rec = dyn.integrate_hartree(A, _hartree_state(v0), T, dt, reference=ref)
    else:
        p = cfg["norm"]["p"]
        nrm = AmbientNorm.lp(len(cfg["shape"]), p, cfg["norm"]["weights"])
        rec = dyn.integrate_tucker_dlra(A, v0, T, dt, projector=integ["projector"], nrm=nrm,
                                        tol=integ["tol"], reference=ref)
    return rec, ref


def cmd_evolve(args):
    cfg = load_config(args.config, {
        "T": args.T, "dt": args.dt, "seed": args.seed, "csv": args.csv, "json": args.json,
        "dump_states": args.dump_states, "projector": args.projector, "method": args.method,
        "reference": args.reference,
    })
    integ = cfg["integrator"]
    log.info("evolve: method=%s projector=%s T=%g dt=%g seed=%d", integ["method"], integ["projector"],
             integ["T"], integ["dt"], cfg["seed"])
    try:
        rec, ref = run_evolve(cfg, reference=cfg["reference"])
    except RankDegeneracy as exc:
        log.error("rank degeneracy at step %s: %s", exc.step, exc)
        _emit({"error": "rank_degeneracy", "step": exc.step, "message": str(exc)})
        return EXIT_RANK
    except MaxIterationsExceeded as exc:
        log.error("%s", exc)
        _emit({"error": "solver", "message": str(exc)})
        return EXIT_SOLVER

    out = cfg["output"]
    if out["csv"]:
        with open(out["csv"], "w", newline="") as fh:
            rec.to_csv(fh)
    if out["json"]:
        with open(out["json"], "w") as fh:
            fh.write(rec.to_json(dump_states=out["dump_states"]) + "\n")

    last = rec.diagnostics[-1]
    summary = {"method": integ["method"], "projector": integ["projector"], "T": integ["T"],
               "dt": rec.times[1] - rec.times[0], "steps": len(rec.times) - 1, "seed": cfg["seed"]}
    if integ["method"] == "hartree":
        summary["final_lambda"] = last["lambda"]
        summary["lambda_closed"] = last["lambda_closed"]
        summary["max_tangency"] = max(d["tangency"] for d in rec.diagnostics)
    else:
        summary["max_galerkin_residual"] = max(d["galerkin_residual"] for d in rec.diagnostics)
    if ref is not None:
        summary["terminal_error"] = last["ref_error"]
        summary["terminal_relative_error"] = last["ref_error"] / float(np.linalg.norm(ref.dense()))
    if args.dt_sweep:
        summary["dt_sweep"] = _dt_sweep(cfg, args.dt_sweep)
        summary["observed_order"] = summary["dt_sweep"]["observed_order"]
    _emit(summary)
    return EXIT_OK


def _dt_sweep(cfg, levels):
    """Self-convergence over ``levels + 1`` successive dt halvings."""
    levels = max(2, int(levels))
    dt0 = cfg["integrator"]["dt"]
    finals = []
    for k in range(levels + 1):
        rec, _ = run_evolve(cfg, dt=dt0 / 2 ** k, reference=False)
        finals.append(rec.dense())
    diffs = [float(np.linalg.norm(finals[k] - finals[k + 1])) for k in range(levels)]
    # None where a difference vanishes (order undefined; keeps the JSON valid)
    orders = [math.log2(diffs[k] / diffs[k + 1]) if diffs[k] > 0 and diffs[k + 1] > 0 else None
              for k in range(levels - 1)]
    return {"dt": [dt0 / 2 ** k for k in range(levels + 1)], "differences": diffs,
            "orders": orders, "observed_order": orders[-1]}


# -- entry point ------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="tdf", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rank", help="mode ranks of a tensor file")
    p.add_argument("input")
    p.add_argument("--tol", type=float, default=DEFAULT_RANK_TOL)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("hosvd", help="minimal or truncated Tucker representation")
    p.add_argument("input")
    p.add_argument("--rank", help="comma-separated target rank (default: minimal at --tol)")
    p.add_argument("--tol", type=float, default=DEFAULT_RANK_TOL)
    p.add_argument("-o", "--output", help="write the Tucker JSON here instead of stdout")
    p.set_defaults(func=cmd_hosvd)

    p = sub.add_parser("project", help="project a tensor onto the tangent space at a Tucker base")
    p.add_argument("input")
    p.add_argument("--base", required=True, help="Tucker JSON file of the base point")
    p.add_argument("--projector", choices=["hilbert", "metric", "generalized"], default="hilbert")
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=100)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("norms", help="ambient norm and injective-norm lower bound")
    p.add_argument("input")
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--restarts", type=int, default=20)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_norms)

    p = sub.add_parser("evolve", help="integrate reduced dynamics from a JSON config",
                       epilog=CSV_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", required=True, help="experiment config (JSON)")
    p.add_argument("--T", type=float, help="final time (overrides integrator.T)")
    p.add_argument("--dt", type=float, help="step size (overrides integrator.dt)")
    p.add_argument("--seed", type=int, help="seed (overrides the config; TDF_SEED overrides both)")
    p.add_argument("--projector", choices=list(dyn.PROJECTORS), help="tangent-space projector")
    p.add_argument("--method", choices=["auto", "hartree", "dlra"],
                   help="auto picks hartree for rank (1,...,1) with the Euclidean projector")
    p.add_argument("--csv", help="trajectory CSV output path")
    p.add_argument("--json", help="trajectory JSON output path")
    p.add_argument("--dump-states", action="store_true", help="include full states in the JSON output")
    p.add_argument("--dt-sweep", type=int, metavar="LEVELS",
                   help="also run LEVELS dt halvings and report the observed order")
    ref = p.add_mutually_exclusive_group()
    ref.add_argument("--reference", dest="reference", action="store_true", default=None,
                     help="integrate the full ambient ODE alongside (default)")
    ref.add_argument("--no-reference", dest="reference", action="store_false")
    p.set_defaults(func=cmd_evolve)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO
    except RankDegeneracy as exc:
        log.error("%s", exc)
        return EXIT_RANK
    except (TensorFormatError, ConfigError, NotMinimalError, ValueError, TDFError) as exc:
        log.error("%s", exc)
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())
