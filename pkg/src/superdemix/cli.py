"""Command-line interface: ``superdemix {demix,certify,phase-transition,kernel-check}``.

Exit codes: 0 success, 1 parameter/input error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys

import numpy as np

from superdemix.certificate import (
    build_system,
    certificate_polynomials,
    invertibility_diagnostics,
    solve_coefficients,
    verify_certificate,
)
from superdemix.errors import DemixError, InvertibilityError, NumericalFailure
from superdemix.harness import TrialConfig, emit_results, run_phase_transition, trial_instance
from superdemix.kernel import build_kernel, kernel_eval
from superdemix.localize import localize
from superdemix.sdp import DemixProblem, SolverOptions, dual_norm, solve_demix
from superdemix.signal import (
    PointSourceModel,
    PsfRatio,
    measure,
    sample_psf_ratio,
    synthesize_signal,
)

EXIT_OK, EXIT_PARAM, EXIT_NUMERIC = 0, 1, 2


def _pairs(z) -> list:
    return [[float(v.real), float(v.imag)] for v in np.asarray(z)]


def _channel_json(model: PointSourceModel) -> list:
    return [{"tau": float(t), "re": float(a.real), "im": float(a.imag)} for t, a in model.sources]


def instance_to_json(M: int, src1: PointSourceModel, src2: PointSourceModel, psf: PsfRatio | None = None, psf_seed=None) -> dict:
    d = {"M": M, "channel1": _channel_json(src1), "channel2": _channel_json(src2)}
    if psf_seed is not None:
        d["psf_seed"] = int(psf_seed)
    else:
        d["g"] = _pairs(psf.g)
    return d


def instance_from_json(d: dict):
    """Parse an instance file into ``(M, sources1, sources2, psf)``."""
    try:
        M = int(d["M"])

        def channel(key, cid):
            entries = d[key]
            taus = [float(e["tau"]) for e in entries]
            amps = [complex(float(e["re"]), float(e["im"])) for e in entries]
            return PointSourceModel(np.array(taus), np.array(amps, dtype=complex), cid)

        src1, src2 = channel("channel1", 1), channel("channel2", 2)
        if "g" in d:
            psf = PsfRatio(np.array([complex(re, im) for re, im in d["g"]]), M)
        elif "psf_seed" in d:
            psf = sample_psf_ratio(M, int(d["psf_seed"]))
        else:
            raise KeyError("g or psf_seed")
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DemixError):
            raise
        raise InstanceError(f"malformed instance: {exc}") from exc
    return M, src1, src2, psf


class InstanceError(DemixError, ValueError):
    pass


def _load_instance(path):
    try:
        with open(path) as fh:
            return instance_from_json(json.load(fh))
    except OSError as exc:
        raise InstanceError(f"cannot read instance {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InstanceError(f"instance {path} is not valid JSON: {exc}") from exc


def _write_json(obj, out):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def cmd_demix(args) -> int:
    if args.instance:
        M, src1, src2, psf = _load_instance(args.instance)
    else:
        if None in (args.seed, args.m, args.k1, args.k2):
            raise InstanceError("demix needs --instance or all of --seed --m --k1 --k2")
        cfg = TrialConfig(args.m, args.k1, args.k2, args.delta, 1, args.seed)
        src1, src2, psf = trial_instance(cfg, 0)
        M = args.m
    if args.save_instance:
        _write_json(instance_to_json(M, src1, src2, psf), args.save_instance)
    meas = measure(synthesize_signal(src1, M), synthesize_signal(src2, M), psf)
    opts = SolverOptions(
        eps_abs=args.eps_abs, eps_rel=args.eps_rel, max_iters=args.max_iters, rho0=args.rho0
    )
    sol = solve_demix(DemixProblem.from_measurement(meas), opts)
    out = {
        "M": M,
        "x1": _pairs(sol.x1),
        "x2": _pairs(sol.x2),
        "p": _pairs(sol.p),
        "objective": sol.objective,
        "primal_residual": sol.primal_residual,
        "dual_residual": sol.dual_residual,
        "measurement_residual": sol.measurement_residual,
        "iterations": sol.iterations,
        "converged": sol.converged,
        "dual_value": float(np.real(np.vdot(meas.y, sol.p))),
        "dual_norm_p": dual_norm(sol.p),
        "dual_norm_gbar_p": dual_norm(np.conj(psf.g) * sol.p),
    }
    if sol.converged:
        out["localization"] = localize(sol.p, meas.y, psf.g, M, threshold=args.threshold).to_dict()
    _write_json(out, args.out)
    return EXIT_OK


def cmd_certify(args) -> int:
    M, src1, src2, psf = _load_instance(args.instance)
    kern = build_kernel(M)
    system = build_system(kern, psf, src1, src2)
    diag = invertibility_diagnostics(system)
    system = solve_coefficients(system, src1.signs, src2.signs)
    report = verify_certificate(
        certificate_polynomials(system), src1, src2, src1.signs, src2.signs,
        grid_size=args.grid or 64 * M, margin=args.margin,
    )
    report.norms = diag.to_dict()
    _write_json(report.to_dict(), args.out)
    return EXIT_OK


def cmd_phase_transition(args) -> int:
    opts = SolverOptions(
        eps_abs=args.eps_abs, eps_rel=args.eps_rel, max_iters=args.max_iters, rho0=args.rho0
    )
    grid = run_phase_transition(
        args.m, args.kmax, args.trials, args.seed, delta_min=args.delta,
        solver_opts=opts, workers=args.workers,
    )
    emit_results(grid, args.out, "json" if args.out.endswith(".json") else "csv")
    if args.trials_out:
        emit_results(grid.results, args.trials_out, "json" if args.trials_out.endswith(".json") else "csv")
    return EXIT_OK


def kernel_check_rows(M: int, n_random: int = 100, seed: int = 0):
    """``(section, name, value, ok)`` rows: coefficient table and invariant checks."""
    kern = build_kernel(M)
    rows = [("coef", int(n), float(s), "") for n, s in zip(kern.n, kern.s)]
    grid = np.arange(4096) / 4096
    Kg = kern.evaluate(grid).real
    d = np.minimum(grid, 1 - grid)
    rng = np.random.default_rng(seed)
    taus = rng.random(n_random)
    h = 1e-5
    fd_err = 0.0
    for l in range(3):
        fd = (kern.evaluate(taus + h, l) - kern.evaluate(taus - h, l)) / (2 * h)
        ex = kern.evaluate(taus, l + 1)
        fd_err = max(fd_err, float(np.max(np.abs(fd - ex) / np.maximum(np.abs(ex), 1.0))))
    checks = [
        ("K(0)", kernel_eval(kern, 0.0).real, abs(kernel_eval(kern, 0.0) - 1) <= 1e-12),
        ("K'(0)", abs(kernel_eval(kern, 0.0, 1)), abs(kernel_eval(kern, 0.0, 1)) <= 1e-12),
        ("K''(0)", kernel_eval(kern, 0.0, 2).real,
         abs(kernel_eval(kern, 0.0, 2) - kern.kpp0) <= 1e-10 * abs(kern.kpp0)),
        ("min K on grid", float(Kg.min()), Kg.min() >= -1e-9),
        ("max |K| beyond 1/M", float(np.abs(Kg[d >= 1.0 / M]).max()), np.abs(Kg[d >= 1.0 / M]).max() < 1),
        ("finite-difference rel err", fd_err, fd_err <= 1e-4),
        ("max |2 pi n| / sqrt|K''(0)|", float(np.max(np.abs(2 * np.pi * kern.n)) / kern.sqrt_abs_kpp0),
         np.max(np.abs(2 * np.pi * kern.n)) / kern.sqrt_abs_kpp0 <= 4),
        ("M >= 4 (theory regime)", M, kern.in_theory_regime),
    ]
    rows += [("check", name, float(v), bool(ok)) for name, v, ok in checks]
    return rows


def cmd_kernel_check(args) -> int:
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["section", "name", "value", "ok"])
    for row in kernel_check_rows(args.m):
        w.writerow([row[0], row[1], repr(row[2]), row[3]])
    return EXIT_OK


def _solver_flags(p):
    p.add_argument("--eps-abs", type=float, default=SolverOptions.eps_abs)
    p.add_argument("--eps-rel", type=float, default=SolverOptions.eps_rel)
    p.add_argument("--max-iters", type=int, default=SolverOptions.max_iters)
    p.add_argument("--rho0", type=float, default=SolverOptions.rho0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="superdemix", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("demix", help="solve one instance and localize its sources")
    p.add_argument("--instance")
    p.add_argument("--seed", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--k1", type=int)
    p.add_argument("--k2", type=int)
    p.add_argument("--delta", type=float, default=None, help="separation (default 1/(2M))")
    p.add_argument("--threshold", type=float, default=1e-4)
    p.add_argument("--save-instance")
    p.add_argument("--out")
    _solver_flags(p)
    p.set_defaults(func=cmd_demix)

    p = sub.add_parser("certify", help="build and verify the dual certificate of an instance")
    p.add_argument("--instance", required=True)
    p.add_argument("--margin", type=float, default=1e-3)
    p.add_argument("--grid", type=int, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("phase-transition", help="success-rate grid over (K1, K2)")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--kmax", type=int, required=True)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--workers", type=int, default=None, help="default: DEMIX_THREADS or CPU count")
    p.add_argument("--out", required=True)
    p.add_argument("--trials-out")
    _solver_flags(p)
    p.set_defaults(func=cmd_phase_transition)

    p = sub.add_parser("kernel-check", help="print kernel coefficients and invariant checks as CSV")
    p.add_argument("--m", type=int, required=True)
    p.set_defaults(func=cmd_kernel_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (NumericalFailure, InvertibilityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DemixError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARAM


if __name__ == "__main__":
    sys.exit(main())
