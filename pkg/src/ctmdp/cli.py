"""Command-line front end.

Structured JSON goes to stdout, a one-line human summary to stderr.
Exit codes: 0 success, 1 validation or certification failure, 2 usage or
I/O error, 3 non-convergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .average import (
    check_condition1,
    check_condition2,
    optimality_inequality_residual,
    vanishing_discount,
    verify_upper_bound,
)
from .discounted import MonotonicityError, NonConvergenceError, value_iteration
from .model import (
    CtmdpModel,
    InvariantError,
    ModelError,
    PolicyDeterministic,
    PolicyRandomized,
    StructuralError,
    load_model,
    validate_model,
)
from .oracle import EnumerationCapError, brute_force_optimal_average
from .simulate import (
    SimulationConfig,
    estimate_average_cost,
    estimate_discounted_cost,
    simulate_trajectory,
    write_trace_csv,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NONCONVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _positive(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("CTMDP_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"CTMDP_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _read_model(path: str, validate: bool = True) -> tuple[CtmdpModel, str]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    return load_model(raw.decode("utf-8"), validate=validate), hashlib.sha256(raw).hexdigest()


def _manifest(args, digest: str, params: dict, started: float) -> dict:
    out = {
        "command": args.command,
        "model_path": args.model,
        "model_sha256": digest,
        "parameters": params,
        "tool_version": __version__,
    }
    if args.timing:
        out["wall_clock_seconds"] = time.perf_counter() - started
    return out


def _emit(doc: dict) -> None:
    sys.stdout.write(json.dumps(doc, indent=2, allow_nan=False, default=_default) + "\n")


def _default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _say(message: str) -> None:
    print(message, file=sys.stderr)


# -- commands ---------------------------------------------------------------------


def cmd_validate(args, started: float) -> int:
    model, digest = _read_model(args.model, validate=False)
    report = validate_model(model)
    _emit({"manifest": _manifest(args, digest, {}, started), "report": report.to_dict()})
    if report.ok:
        _say(f"{args.model}: ok")
        return EXIT_OK
    for v in report.violations:
        _say(f"{args.model}: {v.name} at state {v.state} action {v.action} (magnitude {v.magnitude:.3g})")
    return EXIT_FAIL


def cmd_solve_discounted(args, started: float) -> int:
    model, digest = _read_model(args.model)
    params = {"alpha": args.alpha, "tol": args.tol, "max_iter": args.max_iter}
    try:
        sol = value_iteration(model, args.alpha, args.tol, args.max_iter)
    except MonotonicityError as exc:
        _emit({"manifest": _manifest(args, digest, params, started), "error": str(exc)})
        _say(f"certification failed: {exc}")
        return EXIT_FAIL
    _emit({"manifest": _manifest(args, digest, params, started), "solution": sol.to_dict(model)})
    if not sol.converged:
        _say(f"not converged after {sol.iterations} sweeps (residual {sol.residual:.3e})")
        return EXIT_NONCONVERGED
    _say(f"converged in {sol.iterations} sweeps, residual {sol.residual:.3e}")
    return EXIT_OK


def cmd_solve_average(args, started: float) -> int:
    model, digest = _read_model(args.model)
    params = {
        "alpha0": args.alpha0,
        "ratio": args.ratio,
        "steps": args.steps,
        "vi_tol": args.vi_tol,
        "tol_g": args.tol_g,
        "tol_h": args.tol_h,
        "cert_tol": args.cert_tol,
    }
    if not 0 < args.ratio < 1:
        raise UsageError("--ratio must lie in (0, 1)")
    try:
        sol = vanishing_discount(
            model, args.alpha0, args.ratio, args.steps, args.vi_tol, args.tol_g, args.tol_h
        )
    except NonConvergenceError as exc:
        _emit({"manifest": _manifest(args, digest, params, started), "error": str(exc), "alpha": exc.alpha})
        _say(str(exc))
        return EXIT_NONCONVERGED
    ineq = optimality_inequality_residual(model, sol.g, sol.h, tol=args.cert_tol)
    bound = verify_upper_bound(model, sol.policy, sol.g + args.cert_tol, sol.h)
    certs = {"optimality_inequality": ineq.to_dict(), "upper_bound": bound.to_dict()}
    try:
        certs["condition1"] = check_condition1(model).to_dict()
    except EnumerationCapError:
        pass
    cond2 = check_condition2(sol.trace) if len(sol.trace) >= 5 else None
    if cond2 is not None:
        certs["condition2"] = cond2.to_dict()
    _emit(
        {
            "manifest": _manifest(args, digest, params, started),
            "solution": sol.to_dict(model),
            "certificates": certs,
        }
    )
    _say(f"g = {sol.g:.10g}, policy = {sol.policy.names(model)}, converged = {sol.converged}")
    if sol.multichain:
        _say("note: policy is multichain; g is the infimum over start states")
    if cond2 is not None and not cond2.ok:
        _say("warning: relative values look unbounded; certificates are advisory for this model")
        return EXIT_OK
    if not (ineq.ok and bound.ok):
        _say("certification failed")
        return EXIT_FAIL
    return EXIT_OK


def _load_policy(path: str, model: CtmdpModel):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: {exc}") from None
    try:
        if "policy" in doc:
            return PolicyDeterministic.from_names(model, doc["policy"])
        if "dist" in doc:
            policy = PolicyRandomized(tuple(np.asarray(d, dtype=float) for d in doc["dist"]))
            policy.check(model)
            return policy
    except (KeyError, StructuralError) as exc:
        raise UsageError(f"{path}: {exc}") from None
    raise UsageError(f"{path}: expected a 'policy' or 'dist' entry")


def cmd_simulate(args, started: float) -> int:
    model, digest = _read_model(args.model)
    if args.policy_from_solver:
        policy = vanishing_discount(model).policy
    else:
        policy = _load_policy(args.policy_file, model)
    if not 0 <= args.start_state < model.num_states:
        raise UsageError("--start-state out of range")
    config = SimulationConfig(
        horizon=args.horizon,
        seed=args.seed,
        replications=args.reps,
        max_jumps=args.max_jumps,
        start_state=args.start_state,
        cemetery=frozenset(args.cemetery or ()),
    )
    workers = _threads(args)
    params = {
        "policy_file": args.policy_file,
        "policy_from_solver": args.policy_from_solver,
        "horizon": args.horizon,
        "reps": args.reps,
        "seed": args.seed,
        "alpha": args.alpha,
        "start_state": args.start_state,
        "max_jumps": args.max_jumps,
        "cemetery": sorted(config.cemetery),
    }
    if args.alpha is None:
        if args.reps < 2:
            raise UsageError("--reps must be at least 2 for a standard error")
        mean, stderr = estimate_average_cost(model, policy, config, workers)
        kind = "average"
    else:
        mean, stderr = estimate_discounted_cost(model, policy, args.alpha, config, workers)
        kind = "discounted"
    policy_doc = policy.names(model) if isinstance(policy, PolicyDeterministic) else [d.tolist() for d in policy.dist]
    _emit(
        {
            "manifest": _manifest(args, digest, params, started),
            "policy": policy_doc,
            "estimate": {"kind": kind, "mean": mean, "stderr": stderr},
        }
    )
    if args.trace:
        records: list = []
        simulate_trajectory(model, policy, config, 0, trace=records)
        with open(args.trace, "w", encoding="utf-8") as fh:
            write_trace_csv(records, fh)
    _say(f"{kind} cost {mean:.6g} +/- {stderr:.2g} over {args.reps} replications")
    return EXIT_OK


def cmd_oracle(args, started: float) -> int:
    model, digest = _read_model(args.model)
    try:
        res = brute_force_optimal_average(model, args.cap)
    except EnumerationCapError as exc:
        raise UsageError(str(exc)) from None
    _emit({"manifest": _manifest(args, digest, {"cap": args.cap}, started), "oracle": res.to_dict(model)})
    _say(f"best g = {res.best_g:.10g} with {res.best_policy.names(model)}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None, help="cap on worker processes")
    common.add_argument("--timing", action="store_true", help="embed wall-clock duration in the manifest")

    parser = argparse.ArgumentParser(prog="ctmdp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", parents=[common], help="check model invariants")
    p.add_argument("model")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("solve-discounted", parents=[common], help="value iteration for W_alpha")
    p.add_argument("model")
    p.add_argument("--alpha", type=_positive, required=True)
    p.add_argument("--tol", type=_positive, default=1e-10)
    p.add_argument("--max-iter", type=int, default=10_000_000)
    p.set_defaults(func=cmd_solve_discounted)

    p = sub.add_parser("solve-average", parents=[common], help="vanishing-discount average optimum")
    p.add_argument("model")
    p.add_argument("--alpha0", type=_positive, default=1.0)
    p.add_argument("--ratio", type=_positive, default=0.5)
    p.add_argument("--steps", type=int, default=30)
    p.add_argument("--vi-tol", type=_positive, default=1e-11)
    p.add_argument("--tol-g", type=_positive, default=1e-7)
    p.add_argument("--tol-h", type=_positive, default=1e-6)
    p.add_argument("--cert-tol", type=_positive, default=1e-6)
    p.set_defaults(func=cmd_solve_average)

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo cost estimates")
    p.add_argument("model")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--policy-file")
    src.add_argument("--policy-from-solver", action="store_true")
    p.add_argument("--horizon", type=_positive, required=True)
    p.add_argument("--reps", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=_positive, default=None)
    p.add_argument("--start-state", type=int, default=0)
    p.add_argument("--max-jumps", type=int, default=10_000_000)
    p.add_argument("--cemetery", type=int, nargs="*", help="states treated as the post-explosion cemetery")
    p.add_argument("--trace", help="write replication 0 as CSV to this path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("oracle", parents=[common], help="brute-force policy enumeration")
    p.add_argument("model")
    p.add_argument("--cap", type=int, default=10**6)
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    started = time.perf_counter()
    try:
        code = args.func(args, started)
    except UsageError as exc:
        _say(f"error: {exc}")
        return EXIT_USAGE
    except InvariantError as exc:
        _emit({"error": str(exc), "report": exc.report.to_dict()})
        _say(f"error: {exc}")
        return EXIT_FAIL
    except ModelError as exc:
        _say(f"error: {type(exc).__name__}: {exc}")
        return EXIT_USAGE
    except ValueError as exc:
        _say(f"error: {exc}")
        return EXIT_USAGE
    if args.timing:
        _say(f"wall clock {time.perf_counter() - started:.3f}s")
    return code


if __name__ == "__main__":
    sys.exit(main())
