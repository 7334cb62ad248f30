"""Command-line interface: ``polysweep <subcommand> ...``.

Exit codes: 0 when every check passes, 1 on a numerical failure or a failed
check (a JSON error report is written), 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import example8 as ex8
from .certify import find_certificate
from .coderivatives import coderiv_orthant
from .errors import SweepError
from .io import (load_controls, load_problem, load_solution, trajectory_csv, write_json, write_text)
from .problem import uniform_mesh
from .solve import (SolveOptions, convergence_study, solve_Pk, solve_reduced_halfspace, study_csv)
from .sweeping import EXPLICIT, ReferenceTrajectory, simulate
from .transcription import DiscreteProblem, cost_Jk


class UsageError(Exception):
    pass


def _floats(text):
    try:
        return np.array([float(v) for v in text.split(",") if v.strip()])
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


def _check(checks, name, value, target, tol):
    ok = bool(np.all(np.abs(np.asarray(value, dtype=float) - np.asarray(target, dtype=float)) <= tol))
    checks.append({"check": name, "value": np.asarray(value, dtype=float).tolist(),
                   "target": np.asarray(target, dtype=float).tolist(), "tol": tol, "pass": ok})
    return ok


def _costs_csv(rows):
    buf = _io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["case", "u1", "u2", "eta", "J", "admissible"], lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (format(v, ".17g") if isinstance(v, float) else ("" if v is None else v))
                    for k, v in r.items()})
    return buf.getvalue()


# --------------------------------------------------------------------------


def cmd_example8(args, out: Path):
    nu = args.nu
    if nu < 2 or nu % 2:
        raise UsageError("--nu must be an even number >= 2")
    checks = []
    tol = args.tol
    report = {"nu": nu, "case": args.case}

    if args.case in (None, 1):
        dp2 = ex8.discrete_problem(2, localized=False)
        red1 = solve_reduced_halfspace(dp2, eta_zero=True)
        _check(checks, "eta0_branch_u", red1.u[1], ex8.U_CASE1, 1e-9)
        _check(checks, "eta0_branch_J", red1.J, float(ex8.J_CASE1), 1e-9)
        report["eta0_branch"] = {"u": red1.u.tolist(), "J": red1.J}
        if args.case == 1:
            write_text(out / "example8_costs.csv",
                       _costs_csv([r for r in red1.table() if r["case"] == "eta=0"]))

    if args.case in (None, 2):
        dp2 = ex8.discrete_problem(2, localized=False)
        red = solve_reduced_halfspace(dp2)
        _check(checks, "reduced_u", red.u[1], ex8.U_OPT, 1e-6)
        _check(checks, "reduced_eta", red.eta, ex8.ETA_OPT, 1e-8)
        _check(checks, "reduced_J", red.J, float(ex8.J_OPT), 1e-9)
        write_text(out / "example8_costs.csv", _costs_csv(red.table()))

        dp = ex8.discrete_problem(nu)
        init = ex8.optimal_quadruple(nu)
        t0 = time.perf_counter()
        res = solve_Pk(dp, init, SolveOptions(seed=args.seed))
        report["solve_seconds"] = time.perf_counter() - t0
        q = res.quadruple
        half = nu // 2
        _check(checks, "solve_u_second_segment", q.u[half:], np.tile(ex8.U_OPT, (half, 1)), 1e-6)
        _check(checks, "solve_eta_second_segment", q.eta[half:, 0], np.full(half, ex8.ETA_OPT), 1e-8)
        _check(checks, "solve_J", res.J, float(ex8.J_OPT), 1e-9 if nu == 2 else 1e-6)
        report["solve"] = {"J": res.J, "u": q.u.tolist(), "eta": q.eta.tolist(),
                           "feasible_starts": res.feasible_starts}

        opt = ex8.optimal_quadruple(nu)
        write_text(out / "example8_trajectory.csv", trajectory_csv(opt))
        k_half = int(np.argmin(np.abs(opt.mesh - 0.5)))
        _check(checks, "state_half", opt.x[k_half], ex8.X_HALF, 1e-12)
        _check(checks, "state_end", opt.x[-1], ex8.X_END, 1e-10)
        _check(checks, "bolza_cost", cost_Jk(ex8.discrete_problem(nu, localized=False), opt),
               float(ex8.J_OPT), 1e-9)

        cert = find_certificate(dp, opt, mode=args.mode, tol=tol)
        write_json(out / "example8_certificate.json", cert.to_dict())
        lam_ok = cert.lam > 0 and not cert.abnormal
        checks.append({"check": "certificate_normal", "value": cert.lam, "pass": bool(lam_ok)})
        _check(checks, "certificate_residual", cert.residual, 0.0, tol)
        if nu == 2:
            _check(checks, "structural_px", cert.px[2, 0] + 2 * cert.px[2, 1], 0.0, tol)
            u1 = ex8.U_OPT
            _check(checks, "structural_psi",
                   2 * cert.psi[1, 0] + 4 * cert.psi[1, 1] + cert.lam * (u1[0] + 4 * u1[1]), 0.0, tol)

    report["checks"] = checks
    report["pass"] = all(c["pass"] for c in checks)
    write_json(out / "example8_checks.json", report)
    for c in checks:
        print(f"{'PASS' if c['pass'] else 'FAIL'}  {c['check']}")
    return 0 if report["pass"] else 1


def _problem_and_mesh(args):
    prob = load_problem(args.problem)
    if isinstance(prob, DiscreteProblem):
        return prob.base, prob.mesh, prob
    return prob, None, None


def cmd_simulate(args, out: Path):
    prob, mesh, _ = _problem_and_mesh(args)
    u = load_controls(args.controls)
    if mesh is None:
        mesh = uniform_mesh(prob.T, u.shape[0])
    if mesh.size - 1 != u.shape[0]:
        raise UsageError("number of controls does not match the mesh")
    q = simulate(prob, u, mesh, mode=args.step_mode)
    write_text(out / "trajectory.csv", trajectory_csv(q))
    print(f"x(T) = {q.x[-1].tolist()}")
    return 0


def cmd_solve(args, out: Path):
    prob, mesh, dp = _problem_and_mesh(args)
    if dp is None:
        if args.nu is None:
            raise UsageError("--nu is required for a problem without a mesh")
        dp = DiscreteProblem(prob, uniform_mesh(prob.T, args.nu))
    if args.init:
        u0 = load_controls(args.init)
    else:
        u0 = np.tile(prob.U.project(np.zeros(prob.d)), (dp.nu, 1))
    init = simulate(prob, u0, dp.mesh)
    res = solve_Pk(dp, init, SolveOptions(seed=args.seed, starts=args.starts, feas_tol=args.tol))
    write_text(out / "solution.csv", trajectory_csv(res.quadruple))
    write_json(out / "solve.json", {"J": res.J, "feasible_starts": res.feasible_starts,
                                    "budget_exceeded": res.budget_exceeded, "history": res.history,
                                    "residuals": res.residuals})
    print(f"J = {res.J!r}")
    return 0 if res.residuals.get("feasible") else 1


def cmd_certify(args, out: Path):
    prob, mesh, dp = _problem_and_mesh(args)
    q = load_solution(args.solution)
    if dp is None:
        dp = DiscreteProblem(prob, q.mesh)
    cert = find_certificate(dp, q, mode=args.mode, tol=args.tol)
    target = Path(args.out) if args.out else out / "certificate.json"
    write_json(target, cert.to_dict())
    print(f"residual = {cert.residual:.3e}  normal residual = {cert.normal_residual:.3e}  "
          f"lambda = {cert.lam:.6g}  abnormal = {cert.abnormal}")
    for name, val in cert.families.items():
        print(f"  {name:16s} {val:.3e}")
    if cert.normal_residual > args.tol:
        print("no certificate with lambda > 0; residual when one family alone may fail:")
        for name, val in sorted(cert.isolation.items(), key=lambda kv: kv[1]):
            print(f"  {name:16s} {val:.3e}")
    return 0 if cert.residual <= args.tol else 1


def cmd_study(args, out: Path):
    nu_list = _ints(args.nu_list)
    if args.problem:
        prob, _, _ = _problem_and_mesh(args)
        ref = None
        if args.reference:
            ref = ReferenceTrajectory.from_quadruple(load_solution(args.reference))
        init = None
    else:
        prob, ref = ex8.problem(), ex8.reference()
        init = ex8.controls(nu_list[0])
    rows = convergence_study(prob, ref, nu_list, SolveOptions(seed=args.seed), init_controls=init,
                             with_proximity=ref is not None)
    write_text(out / "study.csv", study_csv(rows))
    for r in rows:
        print(f"nu={r['nu']:4d}  J={r['J']:.12g}  state_gap={r['state_gap']:.3e}  {r['status']}")
    return 0 if all(r["status"] == "ok" for r in rows) else 1


def cmd_coderiv(args, out: Path):
    x, v, w = _floats(args.x), _floats(args.v), _floats(args.w)
    if not (x.size == v.size == w.size):
        raise UsageError("--x, --v, --w must have the same length")
    desc = coderiv_orthant(x, v, w, tol=args.tol)
    report = desc.to_dict()
    if args.candidate:
        cand = _floats(args.candidate)
        report["candidate_distance"] = desc.distance(cand)
    write_json(out / "coderiv.json", report)
    print(json.dumps(report))
    return 0


# --------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="polysweep", description=__doc__.splitlines()[0])
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=".")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("example8", help="the two-dimensional halfspace example end to end")
    e.add_argument("--case", type=int, choices=(1, 2), default=None)
    e.add_argument("--nu", type=int, default=2)
    e.add_argument("--mode", choices=("th71", "th72"), default="th72")
    e.set_defaults(func=cmd_example8)

    s = sub.add_parser("simulate", help="run the catching-up scheme")
    s.add_argument("--problem", required=True)
    s.add_argument("--controls", required=True)
    s.add_argument("--step-mode", choices=("explicit", "projective"), default=EXPLICIT)
    s.set_defaults(func=cmd_simulate)

    so = sub.add_parser("solve", help="solve the discrete problem")
    so.add_argument("--problem", required=True)
    so.add_argument("--nu", type=int)
    so.add_argument("--init")
    so.add_argument("--starts", type=int, default=16)
    so.set_defaults(func=cmd_solve)

    c = sub.add_parser("certify", help="search a dual certificate for a discrete solution")
    c.add_argument("--problem", required=True)
    c.add_argument("--solution", required=True)
    c.add_argument("--mode", choices=("th71", "th72"), default="th72")
    c.add_argument("--out")
    c.set_defaults(func=cmd_certify)

    st = sub.add_parser("study", help="solve over a list of meshes")
    st.add_argument("--nu-list", required=True)
    st.add_argument("--problem")
    st.add_argument("--reference")
    st.set_defaults(func=cmd_study)

    cd = sub.add_parser("coderiv", help="coderivative of the orthant normal cone")
    cd.add_argument("--x", required=True)
    cd.add_argument("--v", required=True)
    cd.add_argument("--w", required=True)
    cd.add_argument("--candidate")
    cd.set_defaults(func=cmd_coderiv)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    out = Path(args.out_dir)
    try:
        return args.func(args, out)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (SweepError, ValueError, OSError) as exc:
        report = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        try:
            write_json(out / "error.json", report)
        except OSError:
            pass
        print(json.dumps(report), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
