"""Command-line driver: forward | gradcheck | optimize.

Exit codes: 0 success, 2 configuration error, 3 solver failure,
4 validation failure.  All reports are CSV files with stable headers;
figures rendered from those CSVs are written alongside unless disabled.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time


def _set_threads(n: int) -> None:
    # must run before numpy/scipy initialize their BLAS pools
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(n))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fsictl",
                                description="Optimal boundary-pressure control of a 2d "
                                            "fluid-structure interaction scenario")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="scenario config file")
        sp.add_argument("--out", default=None, help="output directory (default from config)")
        sp.add_argument("--threads", type=int, default=None, help="BLAS/OpenMP thread count")
        sp.add_argument("--no-figures", action="store_true", help="skip figure rendering")

    sp = sub.add_parser("forward", help="run the forward (and dual) solver with q = 0")
    common(sp)
    sp.add_argument("--level", type=int, default=None, help="run only this mesh level")
    sp.add_argument("--no-dual", action="store_true", help="skip the adjoint sweep")

    sp = sub.add_parser("gradcheck", help="verify the adjoint gradient against finite differences")
    common(sp)
    sp.add_argument("--directions", type=int, default=5)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--tolerance", type=float, default=1e-3)
    sp.add_argument("--corrupt-dual-sign", action="store_true", help=argparse.SUPPRESS)

    sp = sub.add_parser("optimize", help="run the BFGS optimization over the mesh hierarchy")
    common(sp)
    sp.add_argument("--tol-factor", type=float, default=0.1,
                    help="per-level gradient reduction target")
    sp.add_argument("--max-iter", type=int, default=40, help="BFGS budget per level")
    return p


def _write_csv(path, header, rows):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)
    return path


def _run_stamp(out_dir, cfg_path, extra=None):
    import numpy
    import scipy

    import fsicontrol

    os.makedirs(out_dir, exist_ok=True)
    info = {
        "fsicontrol": fsicontrol.__version__,
        "numpy": numpy.__version__,
        "scipy": scipy.__version__,
        "config": os.path.abspath(cfg_path),
        "time": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    info.update(extra or {})
    with open(os.path.join(out_dir, "run_info.json"), "w") as f:
        json.dump(info, f, indent=2)


def _point_rows(problem, level, traj, scenario):
    from .config import default_report_point

    pt = default_report_point(scenario)
    if pt is None:
        return None
    lv = problem.levels[level]
    sch = problem.scheme
    fc = problem.functional
    rows = []
    for n in range(sch.n_steps + 1):
        t = sch.time(n)
        uy = float(lv.dm.point_eval(pt[0], pt[1], traj.get(n)[:, 4:5])[0])
        tgt = fc.u_target.value(t) if fc.u_target is not None and fc.u_target.kind != "nodal" else 0.0
        rows.append((n, f"{t:.10g}", f"{uy:.12e}", f"{tgt:.12e}"))
    return rows


def cmd_forward(args) -> int:
    import numpy as np

    from . import dual as dualmod
    from . import primal as primalmod
    from .config import build_problem, load_config
    from .fem import NCOMP

    scenario = load_config(args.config)
    out = args.out or scenario.out_dir
    _run_stamp(out, args.config, {"command": "forward"})
    problem = build_problem(scenario)
    levels = [args.level] if args.level is not None else list(range(len(problem.levels)))
    N = problem.scheme.n_steps
    q = np.zeros(N)
    summary = []
    for lev in levels:
        lv = problem.levels[lev]
        store = None
        if scenario.store == "disk":
            store = os.path.join(out, f"trajectory_level{lev}.bin")
        t0 = time.perf_counter()
        traj, stats = primalmod.run_forward(problem, lev, q, store_path=store)
        t_fwd = time.perf_counter() - t0
        rows = [(s.step, s.newton_steps, s.assemblies,
                 f"{s.means()[0]:.3f}", f"{s.means()[1]:.3f}", f"{s.means()[2]:.3f}")
                for s in stats]
        _write_csv(os.path.join(out, f"primal_stats_level{lev}.csv"),
                   ["step", "newton_steps", "assemblies", "gmres_momentum",
                    "gmres_update", "gmres_extension"], rows)
        prows = _point_rows(problem, lev, traj, scenario)
        if prows:
            _write_csv(os.path.join(out, f"point_level{lev}.csv"),
                       ["step", "t", "uy", "target"], prows)
        entry = {
            "level": lev,
            "dofs": lv.n_nodes * NCOMP,
            "mean_newton": np.mean([s.newton_steps for s in stats]),
            "mean_assemblies": np.mean([s.assemblies for s in stats]),
            "mean_gmres_momentum": np.mean([s.means()[0] for s in stats]),
            "mean_gmres_update": np.mean([s.means()[1] for s in stats]),
            "mean_gmres_extension": np.mean([s.means()[2] for s in stats]),
            "forward_seconds": t_fwd,
            "mean_richardson": "",
            "dual_mean_gmres_extension": "",
            "dual_mean_gmres_update": "",
            "dual_mean_gmres_momentum": "",
            "backward_seconds": "",
        }
        if not args.no_dual:
            t0 = time.perf_counter()
            Z, dstats = dualmod.run_backward(problem, lev, traj)
            entry["backward_seconds"] = time.perf_counter() - t0
            drows = [(s.step, s.richardson_steps, s.assemblies,
                      f"{s.means()[0]:.3f}", f"{s.means()[1]:.3f}", f"{s.means()[2]:.3f}")
                     for s in dstats]
            _write_csv(os.path.join(out, f"dual_stats_level{lev}.csv"),
                       ["step", "richardson_steps", "assemblies", "gmres_extension",
                        "gmres_update", "gmres_momentum"], drows)
            entry["mean_richardson"] = np.mean([s.richardson_steps for s in dstats])
            entry["dual_mean_gmres_extension"] = np.mean([s.means()[0] for s in dstats])
            entry["dual_mean_gmres_update"] = np.mean([s.means()[1] for s in dstats])
            entry["dual_mean_gmres_momentum"] = np.mean([s.means()[2] for s in dstats])
        summary.append(entry)
        print(f"level {lev}: dofs {entry['dofs']}, newton {entry['mean_newton']:.2f}, "
              f"gmres(momentum) {entry['mean_gmres_momentum']:.2f}"
              + (f", richardson {entry['mean_richardson']:.2f}" if entry["mean_richardson"] != "" else ""))
    header = list(summary[0].keys())
    _write_csv(os.path.join(out, "forward_summary.csv"), header,
               [[e[k] for k in header] for e in summary])
    if not args.no_figures and scenario.figures:
        from . import report
        report.render_forward_report(out)
    return 0


def cmd_gradcheck(args) -> int:
    import numpy as np

    from . import dual as dualmod
    from . import primal as primalmod
    from . import optimize as optmod
    from .config import build_problem, load_config

    scenario = load_config(args.config)
    out = args.out or scenario.out_dir
    _run_stamp(out, args.config, {"command": "gradcheck"})
    problem = build_problem(scenario)
    seed = args.seed if args.seed is not None else scenario.seed
    rng = np.random.default_rng(seed)
    N = problem.scheme.n_steps
    level = 0
    q0 = np.zeros(N)

    def j_of(q):
        traj, _ = primalmod.run_forward(problem, level, q)
        return optmod.evaluate_functional(problem, level, traj, q)

    traj, _ = primalmod.run_forward(problem, level, q0)
    Z, _ = dualmod.run_backward(problem, level, traj)
    g = optmod.evaluate_gradient(problem, level, Z, q0)
    if args.corrupt_dual_sign:
        # test hook: flip the adjoint contribution, keep the Tikhonov part
        g = 2.0 * problem.functional.alpha * problem.scheme.k * q0 - g
    scale = max(float(np.linalg.norm(g)), 1e-30)

    rows = []
    worst = 0.0
    for i in range(args.directions):
        dq = rng.standard_normal(N)
        dq /= np.linalg.norm(dq)
        an = float(g @ dq)
        best = None
        for h in (1e-3, 1e-4, 1e-5, 1e-6):
            fd = (j_of(q0 + h * dq) - j_of(q0 - h * dq)) / (2.0 * h)
            rel = abs(fd - an) / max(abs(fd), abs(an), 1e-30)
            if best is None or rel < best[1]:
                best = (fd, rel, h)
        rows.append((i, f"{an:.12e}", f"{best[0]:.12e}", f"{best[1]:.3e}", best[2]))
        worst = max(worst, best[1])
        print(f"direction {i}: adjoint {an:+.8e}  fd {best[0]:+.8e}  rel {best[1]:.3e} (h={best[2]:g})")
    _write_csv(os.path.join(out, "gradcheck.csv"),
               ["direction", "adjoint", "finite_difference", "rel_err", "fd_step"], rows)
    print(f"worst relative error: {worst:.3e} (tolerance {args.tolerance:g}, |grad|={scale:.3e})")
    if worst > args.tolerance:
        print("gradcheck FAILED", file=sys.stderr)
        return 4
    print("gradcheck passed")
    return 0


def cmd_optimize(args) -> int:
    import numpy as np

    from . import optimize as optmod
    from . import primal as primalmod
    from .config import build_problem, load_config

    scenario = load_config(args.config)
    out = args.out or scenario.out_dir
    _run_stamp(out, args.config, {"command": "optimize"})
    problem = build_problem(scenario)
    N = problem.scheme.n_steps
    res = optmod.optimize_on_hierarchy(problem, np.zeros(N), tol_factor=args.tol_factor,
                                       max_iter_per_level=args.max_iter)
    rows = [(r.iteration, r.level, f"{r.j:.12e}", f"{r.grad_norm:.12e}", f"{r.step_scale:g}",
             f"{r.forward_seconds:.2f}", f"{r.backward_seconds:.2f}") for r in res.history]
    _write_csv(os.path.join(out, "history.csv"),
               ["iteration", "level", "j", "grad_norm", "step_scale",
                "forward_seconds", "backward_seconds"], rows)
    sch = problem.scheme
    _write_csv(os.path.join(out, "control.csv"), ["n", "t", "q"],
               [(n + 1, f"{sch.time(n + 1):.10g}", f"{res.q[n]:.12e}") for n in range(N)])
    finest = len(problem.levels) - 1
    traj, _ = primalmod.run_forward(problem, finest, res.q)
    prows = _point_rows(problem, finest, traj, scenario)
    if prows:
        _write_csv(os.path.join(out, f"point_level{finest}.csv"),
                   ["step", "t", "uy", "target"], prows)
    print(f"optimization {res.status} after {res.iterations} accepted steps; "
          f"final j {res.history[-1].j:.4e}, |grad| {res.history[-1].grad_norm:.4e}")
    if not args.no_figures and scenario.figures:
        from . import report
        report.render_optimize_report(out)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads:
        _set_threads(args.threads)
    from .config import ConfigError
    from .linalg import SolverError
    from .mesh import MeshError

    try:
        if args.command == "forward":
            return cmd_forward(args)
        if args.command == "gradcheck":
            return cmd_gradcheck(args)
        if args.command == "optimize":
            return cmd_optimize(args)
    except (ConfigError, MeshError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
