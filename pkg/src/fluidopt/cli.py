"""Command-line entry point.

    fluidopt simulate  --scene S [--steps N] [--actions trajectory.json]
    fluidopt validate  SUITE|all
    fluidopt gradcheck --scene S [--eps E] [--params N]
    fluidopt optimize  --scene S --method dp|dp-hard|cma-es [--budget B]

``--scene`` takes a YAML file or the name of a built-in toy scene.  Every
command writes ``manifest.json`` into its output directory before doing
any work.  Exit codes: 0 pass, 1 check failure, 2 usage error, 3 engine
error.
"""
import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .errors import FluidOptError, SceneError
from .export import MetricsWriter, RunManifest, config_hash, dump_json, write_fields, write_frame, write_rows

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_ENGINE = 0, 1, 2, 3
OUT_ENV = "FLUIDOPT_OUT"
GRAD_TOL = 1e-3


class UsageError(Exception):
    pass


def _load(scene_arg, seed, deterministic):
    from .scene import build_scene, load_scene_file
    from .scenes import TOYS

    if scene_arg is None:
        raise UsageError("--scene is required")
    if os.path.exists(scene_arg):
        spec = load_scene_file(scene_arg)
    elif scene_arg in TOYS:
        spec = TOYS[scene_arg]()
    else:
        raise UsageError(f"no scene file or built-in scene named {scene_arg!r}")
    if seed is not None:
        spec["seed"] = seed
    if deterministic:
        spec.setdefault("config", {})["mode"] = "deterministic"
    state = build_scene(None, spec)
    return spec, state


def _out_dir(args, command, spec):
    if args.out:
        return args.out
    root = os.environ.get(OUT_ENV, "runs")
    return os.path.join(root, f"{command}-{config_hash(spec, {'seed': args.seed})[:8]}")


def _manifest(args, command, spec, state, settings=None):
    out = _out_dir(args, command, spec)
    seed = int(spec.get("seed", 0))
    return RunManifest.create(command, args.scene, spec, seed, state.scene.config.mode, out, settings).write()


def _trajectory(spec, seed):
    from .scenes import initial_trajectory

    return initial_trajectory(spec, seed)


# ---------------------------------------------------------------- commands

def cmd_simulate(args):
    from .optimize import ActionTrajectory
    from .step import mpm_substep

    spec, state = _load(args.scene, args.seed, args.deterministic)
    steps = args.steps if args.steps is not None else int(spec.get("steps", 10))
    if steps < 0:
        raise UsageError("--steps must be non-negative")
    man = _manifest(args, "simulate", spec, state, {"steps": steps, "actions": args.actions})
    acts = None
    if args.actions:
        with open(args.actions) as fh:
            acts = ActionTrajectory.from_dict(json.load(fh)["trajectory"]).per_substep()
    frames = os.path.join(man.out_dir, "frames")
    os.makedirs(frames, exist_ok=True)
    metrics = MetricsWriter(os.path.join(man.out_dir, "metrics.csv"), state.scene.config.dim, man.config_hash)
    n_sub = state.scene.config.substeps_per_step
    try:
        for i in range(steps):
            for _ in range(n_sub):
                k = state.step
                a = acts[k] if acts is not None and k < len(acts) else None
                state, _ = mpm_substep(state, a)
            write_frame(os.path.join(frames, f"frame_{i + 1:05d}.csv"), state, man.config_hash)
            if state.gas is not None:
                write_fields(os.path.join(frames, f"frame_{i + 1:05d}.json"), state, man.config_hash)
            metrics.write(i + 1, state)
    finally:
        metrics.close()
    finite = bool(np.all(np.isfinite(state.x)) and np.all(np.isfinite(state.v)))
    print(f"simulated {steps} steps ({steps * n_sub} substeps) -> {man.out_dir}")
    return EXIT_OK if finite else EXIT_FAIL


def cmd_validate(args):
    from .validation import SUITES, run_suite

    name = args.suite or "all"
    names = sorted(SUITES) if name == "all" else [name]
    for n in names:
        if n not in SUITES:
            raise UsageError(f"unknown suite {n!r}; choose from {sorted(SUITES)} or 'all'")
    seed = 0 if args.seed is None else args.seed
    spec = {"suites": names, "seed": seed}
    out = args.out or os.path.join(os.environ.get(OUT_ENV, "runs"), f"validate-{config_hash(spec)[:8]}")
    man = RunManifest.create("validate", name, spec, seed, "deterministic", out).write()
    ok = True
    timing = {}
    for n in names:
        rep = run_suite(n, seed=seed)
        timing[n] = rep.pop("wall_time")
        rep["manifest"] = man.config_hash
        dump_json(rep, os.path.join(man.out_dir, f"{n}.json"))
        ok = ok and rep["passed"]
        print(f"{n:16s} {'PASS' if rep['passed'] else 'FAIL'}  ({timing[n]:.1f}s)")
        for cname, c in rep["checks"].items():
            if not isinstance(c["value"], list):
                print(f"    {cname}: {c['value']} (limit {c['limit']}) {'ok' if c['passed'] else 'FAILED'}")
    # wall times are kept apart so the reports themselves are reproducible
    dump_json(timing, os.path.join(man.out_dir, "timing.json"))
    return EXIT_OK if ok else EXIT_FAIL


def cmd_gradcheck(args):
    from .autodiff import finite_difference_gradient, grad_trajectory
    from .objectives import LossSpec
    from .optimize import evaluate

    spec, state = _load(args.scene, args.seed, args.deterministic)
    seed = int(spec.get("seed", 0))
    eps = args.eps if args.eps is not None else float(spec.get("gradcheck", {}).get("eps", 1e-6))
    if not eps > 0:
        raise UsageError("--eps must be positive")
    man = _manifest(args, "gradcheck", spec, state, {"eps": eps, "params": args.params})
    loss = LossSpec.from_dict(spec.get("loss", {}), state)
    if not loss.terms:
        raise UsageError("scene has no loss block")
    loss.use_attraction = False
    traj = _trajectory(spec, seed)
    rep = grad_trajectory(state, traj, loss)
    p0 = traj.params()
    n = p0.size if args.params is None else min(args.params, p0.size)
    grad = rep.gradient[:, traj.mask > 0].ravel()[:n]

    def objective(p):
        full = p0.copy()
        full[:n] = p
        return evaluate(state, traj.with_params(full), loss)

    fd = finite_difference_gradient(objective, p0[:n], eps)
    rep.gradient = grad
    rep.compare(fd)
    rep.extra = {"eps": eps, "n_params": n, "manifest": man.config_hash}
    rep.substep_gradient = None
    rep.to_json(os.path.join(man.out_dir, "gradreport.json"))
    rows = [{"param": i, "adjoint": float(g), "finite_difference": float(f), "abs_error": float(abs(g - f))}
            for i, (g, f) in enumerate(zip(grad, fd))]
    write_rows(os.path.join(man.out_dir, "gradcheck.csv"), rows, man.config_hash)
    print(f"{'param':>5s} {'adjoint':>16s} {'finite diff':>16s} {'abs error':>10s}")
    for r in rows:
        print(f"{r['param']:5d} {r['adjoint']:16.9e} {r['finite_difference']:16.9e} {r['abs_error']:10.2e}")
    print(f"loss {rep.loss:.9e}  max_rel_error {rep.max_rel_error:.3e}  (limit {GRAD_TOL:g})")
    return EXIT_OK if rep.max_rel_error <= GRAD_TOL else EXIT_FAIL


def cmd_optimize(args):
    from .objectives import LossSpec
    from .optimize import ExpandSchedule, evaluate, optimize_cma, optimize_dp, optimize_dp_hard

    if args.method not in ("dp", "dp-hard", "cma-es"):
        raise UsageError("--method must be one of dp, dp-hard, cma-es")
    spec, state = _load(args.scene, args.seed, args.deterministic)
    seed = int(spec.get("seed", 0))
    opt = spec.get("optimizer", {})
    man = _manifest(args, "optimize", spec, state, {"method": args.method, "budget": args.budget})
    loss = LossSpec.from_dict(spec.get("loss", {}), state)
    if not loss.terms:
        raise UsageError("scene has no loss block")
    init = _trajectory(spec, seed)
    initial = evaluate(state, init, loss)
    step_size = float(opt.get("step_size", 0.05))
    if args.method == "dp":
        sched = ExpandSchedule(init.n_segments, opt.get("initial_window"), float(opt.get("growth_factor", 2.0)),
                               int(opt.get("patience", 20)), float(opt.get("improvement_threshold", 1e-3)))
        res = optimize_dp(state, loss, init, args.budget or int(opt.get("iterations", 200)), step_size, sched)
    elif args.method == "dp-hard":
        res = optimize_dp_hard(state, loss, init, args.budget or int(opt.get("iterations", 200)), step_size)
    else:
        res = optimize_cma(state, loss, init, args.budget or int(opt.get("evaluations", 200)),
                           float(opt.get("sigma0", 0.5)), seed=seed)
    final = evaluate(state, res.trajectory, loss)
    if res.rows:
        write_rows(os.path.join(man.out_dir, "history.csv"), res.rows, man.config_hash)
    dump_json({"manifest": man.config_hash, "method": args.method, "trajectory": res.trajectory.to_dict()},
              os.path.join(man.out_dir, "trajectory.json"))
    result = {"manifest": man.config_hash, "method": args.method, "initial_loss": initial,
              "final_loss": final, "reward": loss.reward(final), "iterations": len(res.history),
              "aborted": res.aborted}
    dump_json(result, os.path.join(man.out_dir, "result.json"))
    print(f"{args.method}: initial loss {initial:.6g}  final loss {final:.6g}  reward {result['reward']:.6g}")
    if res.aborted:
        print(f"aborted: {res.aborted}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "validate": cmd_validate, "gradcheck": cmd_gradcheck,
            "optimize": cmd_optimize}


def build_parser():
    p = argparse.ArgumentParser(prog="fluidopt", description="Differentiable multi-material fluid simulation.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--scene")
        s.add_argument("--seed", type=int)
        s.add_argument("--out")
        s.add_argument("--deterministic", action="store_true")
        s.add_argument("--steps", type=int)
        s.add_argument("--method", default="dp")
        s.add_argument("--budget", type=int)
        s.add_argument("--eps", type=float)
        if name == "validate":
            s.add_argument("suite", nargs="?")
        if name == "gradcheck":
            s.add_argument("--params", type=int)
        if name == "simulate":
            s.add_argument("--actions")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except SceneError as err:
        print(f"scene error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except FluidOptError as err:
        print(f"engine error: {err}", file=sys.stderr)
        return EXIT_ENGINE


if __name__ == "__main__":
    sys.exit(main())
