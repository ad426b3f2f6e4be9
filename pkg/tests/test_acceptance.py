"""Acceptance criteria 1-8.  Each test prints one PASS/FAIL line and the
terminal summary repeats them all."""
import json
import math
import os
import time

import numpy as np
import pytest

from fluidopt import mpm
from fluidopt.autodiff import finite_difference_gradient, grad_trajectory, max_rel_error
from fluidopt.checkpoint import expected_snapshots
from fluidopt.cli import main
from fluidopt.materials import (box_yield_project, corotated_energy, corotated_stress, liquid_project,
                                von_mises_project)
from fluidopt.objectives import (LossSpec, air_sensor_loss, attraction_weights, chamfer_distance,
                                 mixing_spread_loss, room_sensors)
from fluidopt.optimize import (ExpandSchedule, evaluate, optimize_cma, optimize_dp, optimize_dp_hard,
                               with_contact_model)
from fluidopt.scene import build_scene
from fluidopt.scenes import initial_trajectory, toy_problem
from fluidopt.step import mpm_substep
from fluidopt.svd import signed_svd
from fluidopt.validation import run_suite

from acceptance_log import report
from oracles import central_diff, chamfer_bruteforce, random_F
from scenes_util import block, build, pairwise

GRAD_TOL = 1e-3
FREE_PARTICLE_TOL = 1e-8
GRAD_BUDGET_S = 600.0
STRIDE_TOL = 1e-12
SUITE_BUDGET_S = 300.0
OPT_BUDGET_S = 1800.0
SEEDS = (0, 1, 2, 3, 4)

KINDS = ("Elastic", "Plastic", "Liquid", "ViscousLiquid", "NonNewtonian", "Rigid")


def kind_scene(kind, seed, horizon=100, segments=2, push=1.0):
    """A block of one material kind shoved by a frictional paddle.

    The paddle starts half a cell from the block so grid nodes are inside
    it within a few substeps; a wide soft-contact band keeps the loss smooth.
    """
    rng = np.random.default_rng(seed)
    mat = {"kind": kind, "mu": 0.0 if kind == "Liquid" else 20.0, "lam": 20.0, "rho": 1.0}
    if kind == "Plastic":
        mat.update(theta_c=0.02, theta_s=0.02)
    if kind == "NonNewtonian":
        mat.update(sigma_y=1.0)
    cx = 0.5 + 0.03 * rng.uniform(-1, 1)
    return {"config": {"dim": 2, "grid_resolution": 16, "dt_substep": 5e-4, "contact_threshold": 30.0},
            "materials": {"m": mat},
            "bodies": [{"name": "b", "material": "m", "shape": {"type": "box", "half_extents": [0.08, 0.06]},
                        "position": [cx, 0.3], "particles_per_cell": 4,
                        "velocity": list(rng.uniform(-0.3, 0.3, 2))}],
            "effectors": [{"name": "paddle", "shapes": [{"type": "box", "half_extents": [0.03, 0.08]}],
                           "position": [cx - 0.12, 0.32], "friction": 0.4, "controlled": True,
                           "action_mask": [1, 1, 0, 0, 0, 1]}],
            "loss": {"terms": [{"kind": "target_point", "body": "b", "goal": [0.7, 0.4]}]},
            "optimizer": {"horizon": horizon, "segments": segments, "initial": [push, 0, 0, 0, 0, 0]},
            "seed": seed}


def gradcheck(spec, seed, eps=1e-6, scale=0.3):
    state = build_scene(None, spec)
    loss = LossSpec.from_dict(spec["loss"], state)
    traj = initial_trajectory(spec, seed, scale)
    rep = grad_trajectory(state, traj, loss)
    g = rep.gradient[:, traj.mask > 0].ravel()
    fd = finite_difference_gradient(lambda p: evaluate(state, traj.with_params(p), loss), traj.params(), eps)
    return max_rel_error(g, fd)


# ---------------------------------------------------------------- 1


def test_criterion_1_gradients_match_finite_differences():
    t0 = time.perf_counter()
    checks = []
    for i, kind in enumerate(KINDS):
        err = gradcheck(kind_scene(kind, seed=10 + i), 10 + i)
        checks.append((kind, err <= GRAD_TOL, f"{err:.1e}"))
    _, _, _, gspec = toy_problem("gas_heating", seed=1)
    gspec["optimizer"]["horizon"] = 30
    err = gradcheck(gspec, 1)
    checks.append(("gas_only", err <= GRAD_TOL, f"{err:.1e}"))
    _, _, _, fspec = toy_problem("free_particle", seed=2)
    err = gradcheck(fspec, 2, eps=fspec["gradcheck"]["eps"])
    checks.append(("free_particle", err <= FREE_PARTICLE_TOL, f"{err:.1e}"))
    wall = time.perf_counter() - t0
    checks.append(("wall_s", wall <= GRAD_BUDGET_S, f"{wall:.0f}"))
    report(1, "gradient vs finite diff", checks)


# ---------------------------------------------------------------- 2


def test_criterion_2_checkpoint_stride_independence():
    spec = kind_scene("Elastic", seed=3, horizon=512, segments=8, push=0.3)
    state = build_scene(None, spec)
    loss = LossSpec.from_dict(spec["loss"], state)
    traj = initial_trajectory(spec, 3, 0.2)
    reps = {k: grad_trajectory(state, traj, loss, stride=k) for k in (1, 8, 64)}
    ref = reps[1].gradient
    scale = max(1.0, float(np.abs(ref).max()))
    checks = []
    for k, rep in reps.items():
        diff = float(np.abs(rep.gradient - ref).max()) / scale
        checks.append((f"stride{k}_diff", diff <= STRIDE_TOL, f"{diff:.1e}"))
        want = expected_snapshots(512, k)
        checks.append((f"stride{k}_snapshots", rep.snapshots == want, f"{rep.snapshots}/{want}"))
    report(2, "checkpoint strides agree", checks)


# ---------------------------------------------------------------- 3


def _dp_over_p0(r):
    p0 = np.asarray(r["initial_momentum"])
    return float(np.linalg.norm(np.asarray(r["final_momentum"]) - p0) / np.linalg.norm(p0))


SUITE_CHECKS = {
    "momentum": lambda r: [("dp_over_p0", _dp_over_p0(r) <= 1e-9 and r["passed"], f"{_dp_over_p0(r):.1e}")],
    "volume": lambda r: [("drift", r["checks"]["max_relative_drift"]["value"] <= 0.1 and r["substeps"] >= 10_000,
                          f"{r['checks']['max_relative_drift']['value']:.3f}")],
    "buoyancy": lambda r: [("rise", r["passed"], f"{r['checks']['net_rise']['value']:.3f}")],
    "karman": lambda r: [("div", r["checks"]["max_divergence"]["value"] <= 1e-4,
                          f"{r['checks']['max_divergence']['value']:.1e}"),
                         ("freq", r["checks"]["dominant_frequency"]["passed"]
                          and r["checks"]["peak_power_share"]["passed"] and r["checks"]["wake_amplitude"]["passed"],
                          f"{r['checks']['dominant_frequency']['value']:.2f}Hz")],
    "magnus": lambda r: [("magnus", r["passed"], "ok" if r["passed"] else "bad")],
    "rayleigh_taylor": lambda r: [("rt_growth", r["passed"], f"{r['checks']['deviation_grows']['value']:.3f}")],
    "dam_break": lambda r: [("dam_break", r["checks"]["no_nan"]["passed"]
                             and r["checks"]["late_to_peak_kinetic_energy"]["value"] < 0.1,
                             f"{r['checks']['late_to_peak_kinetic_energy']['value']:.3f}")],
    "bounce": lambda r: [("bounce", r["passed"], "monotone" if r["passed"] else "not monotone")],
}


def test_criterion_3_validation_suites():
    checks = []
    for name, extract in SUITE_CHECKS.items():
        rep = run_suite(name, seed=0)
        checks += extract(rep)
        checks.append((f"{name}_s", rep["wall_time"] <= SUITE_BUDGET_S, f"{rep['wall_time']:.0f}"))
    report(3, "physical validation", checks)


# ---------------------------------------------------------------- 4


def test_criterion_4_constitutive_properties():
    rng = np.random.default_rng(0)
    stress_err = proj_err = clamp_viol = vm_err = det_err = 0.0
    for k in range(40):
        d = 2 + k % 2
        F = random_F(rng, d, 0.35)
        P = corotated_stress(F, 2.0, 3.0)
        fd = central_diff(lambda X: corotated_energy(X, 2.0, 3.0), F, 1e-6)
        stress_err = max(stress_err, float(np.abs(P - fd).max()) / max(1.0, float(np.abs(P).max())))
        Fb = box_yield_project(F, 0.05, 0.08)
        s = signed_svd(Fb)[1]
        clamp_viol = max(clamp_viol, float(np.max(np.maximum(0.95 - s, 0) + np.maximum(s - 1.08, 0))))
        Fv = von_mises_project(F, 5.0, 50.0)
        Fl = liquid_project(F)
        for fn, out in ((lambda X: box_yield_project(X, 0.05, 0.08), Fb),
                        (lambda X: von_mises_project(X, 5.0, 50.0), Fv), (liquid_project, Fl)):
            proj_err = max(proj_err, float(np.abs(fn(out) - out).max()))
        e = np.log(signed_svd(F)[1])
        if 2 * 50.0 * np.linalg.norm(e - e.mean()) > 5.0:
            ev = np.log(signed_svd(Fv)[1])
            vm_err = max(vm_err, abs(2 * 50.0 * np.linalg.norm(ev - ev.mean()) - 5.0))
        det_err = max(det_err, abs(np.linalg.det(Fl) - np.linalg.det(F)))
    s = build(block("Rigid"))
    s.v += 0.5 * rng.standard_normal(s.v.shape)
    D0 = pairwise(s.scene.rest)
    rigid_err = 0.0
    for _ in range(30):
        s, _ = mpm_substep(s)
        rigid_err = max(rigid_err, float(np.abs(pairwise(s.x) - D0).max()))
    report(4, "constitutive models", [
        ("stress_vs_fd", stress_err <= 1e-6, f"{stress_err:.1e}"),
        ("idempotent", proj_err <= 1e-12, f"{proj_err:.1e}"),
        ("box_bounds", clamp_viol <= 1e-12, f"{clamp_viol:.1e}"),
        ("von_mises_norm", vm_err <= 1e-10, f"{vm_err:.1e}"),
        ("liquid_det", det_err <= 1e-12, f"{det_err:.1e}"),
        ("rigid_dist", rigid_err <= 1e-12, f"{rigid_err:.1e}"),
    ])


# ---------------------------------------------------------------- 5


def test_criterion_5_soft_contact():
    v = np.array([[0.4, -1.3, 0.2]])
    vc = np.array([[-0.7, 0.0, 0.9]])
    exact = 0.0
    for d, a in ((0.0, 1.0), (math.log(2), 0.5), (10.0, math.exp(-10))):
        out = mpm.soft_contact_blend(v, vc, np.array([d]))
        exact = max(exact, float(np.abs(out - (a * vc + (1 - a) * v)).max()))
    ds = np.arange(0, 5 + 1e-12, 1e-3)
    alpha = mpm.contact_alpha(ds)
    steps = np.diff(alpha)
    report(5, "soft contact", [
        ("v_new_exact", exact <= 1e-15, f"{exact:.1e}"),
        ("monotone", bool(np.all(steps <= 0)), "non-increasing"),
        ("continuous", float(np.abs(steps).max()) <= 1e-3, f"max_jump={np.abs(steps).max():.1e}"),
    ])


# ---------------------------------------------------------------- 6


def test_criterion_6_optimisation():
    checks = []
    slowest = 0.0

    # pouring: DP against DP-H at equal iteration budgets, both scored under the soft engine
    dp, dph = [], []
    for seed in SEEDS:
        state, loss, init, spec = toy_problem("toy_pouring", seed=seed)
        step = spec["optimizer"]["step_size"]
        t = time.perf_counter()
        r = optimize_dp(state, loss, init, 30, step)
        slowest = max(slowest, time.perf_counter() - t)
        dp.append(evaluate(state, r.trajectory, loss))
        t = time.perf_counter()
        r = optimize_dp_hard(state, loss, init, 30, step)
        slowest = max(slowest, time.perf_counter() - t)
        dph.append(evaluate(state, r.trajectory, loss))
    checks.append(("pour_dp<=dph", np.median(dp) <= np.median(dph), f"{np.median(dp):.3f}<={np.median(dph):.3f}"))

    # gathering: DP halves the initial loss within 200 iterations; CMA-ES improves
    ratios, iters, cma_gain = [], [], []
    for seed in SEEDS:
        state, loss, init, spec = toy_problem("toy_gathering", seed=seed)
        L0 = evaluate(state, init, loss)
        t = time.perf_counter()
        r = optimize_dp(state, loss, init, 200, spec["optimizer"]["step_size"], stop_below=0.5 * L0)
        slowest = max(slowest, time.perf_counter() - t)
        ratios.append(r.best_loss / L0)
        iters.append(len(r.history))
        t = time.perf_counter()
        c = optimize_cma(state, loss, init, budget=60, sigma0=0.5, seed=seed)
        slowest = max(slowest, time.perf_counter() - t)
        cma_gain.append(c.best_loss < L0)
    checks.append(("gather_dp_ratio", np.median(ratios) <= 0.5 and max(iters) <= 200,
                   f"{np.median(ratios):.2f} in <= {max(iters)} it"))
    checks.append(("gather_cma_improves", np.median(cma_gain) >= 1, f"{sum(cma_gain)}/5"))

    # window schedule: monotone and reaching the horizon
    state, loss, init, spec = toy_problem("toy_gathering", seed=0)
    sched = ExpandSchedule(init.n_segments)
    t = time.perf_counter()
    r = optimize_dp(state, loss, init, 200, 0.05, schedule=sched)
    slowest = max(slowest, time.perf_counter() - t)
    w = r.windows
    checks.append(("window_monotone_reaches_horizon",
                   all(a <= b for a, b in zip(w, w[1:])) and w[-1] == init.n_segments, f"{w[0]}->{w[-1]}"))
    checks.append(("slowest_run_s", slowest <= OPT_BUDGET_S, f"{slowest:.0f}"))
    report(6, "optimisation", checks)


# ---------------------------------------------------------------- 7


def test_criterion_7_loss_zoo():
    rng = np.random.default_rng(0)
    sym = brute = 0.0
    for _ in range(20):
        A, B = rng.standard_normal((7, 2)), rng.standard_normal((4, 2))
        sym = max(sym, abs(chamfer_distance(A, B) - chamfer_distance(B, A)))
        brute = max(brute, abs(chamfer_distance(A, B) - chamfer_bruteforce(A, B)))
    ex1 = chamfer_distance([[0.0, 0.0]], [[3.0, 4.0]])
    ex2 = chamfer_distance([[0.0, 0.0], [1.0, 0.0]], [[0.0, 0.0]])
    P = rng.standard_normal((9, 2))
    shift = abs(mixing_spread_loss(P + [3.0, -2.0]) - mixing_spread_loss(P))
    from fluidopt.config import GasConfig
    from fluidopt.gas import GasGrid

    grid = GasGrid(np.zeros(2), 1 / 16, (16, 16), GasConfig())
    pos, lab = room_sensors({"a": [[0.1, 0.1], [0.3, 0.3]], "b": [[0.5, 0.1], [0.9, 0.4]],
                             "c": [[0.2, 0.6], [0.8, 0.9]]})
    base = air_sensor_loss(np.zeros(grid.shape), grid, pos, np.zeros(27))
    delta = 0.2
    off = air_sensor_loss(np.full(grid.shape, delta), grid, pos, np.zeros(27))
    Q = rng.uniform(0, 1, (12, 2))
    L = rng.uniform(0, 3, 12)
    W = attraction_weights(Q, L, 0.3, 0.5)
    rows = W.sum(1)
    normed = bool(np.all((np.abs(rows - 1) < 1e-12) | (rows == 0)) and np.all(W >= 0))
    E = np.array([[0.0, 0.0], [0.1, 0.0], [-0.1, 0.0], [0.0, 0.1]])
    We = attraction_weights(E, np.array([1.0, 0.0, 0.5, 2.0]), 0.3, 1.0)
    monotone = bool(We[0, 1] > We[0, 2] > We[0, 3])
    report(7, "loss zoo", [
        ("chamfer_sym", sym <= 1e-12, f"{sym:.1e}"),
        ("chamfer_oracle", brute <= 1e-12, f"{brute:.1e}"),
        ("chamfer_examples", ex1 == 10.0 and ex2 == 0.5, f"{ex1},{ex2}"),
        ("mixing_shift", shift <= 1e-10, f"{shift:.1e}"),
        ("air_zero", base == 0.0, f"{base}"),
        ("air_27delta", abs(off - 27 * delta) <= 1e-12, f"{off:.6f}"),
        ("attraction_norm", normed, "ok" if normed else "bad"),
        ("attraction_monotone", monotone, "ok" if monotone else "bad"),
    ])


# ---------------------------------------------------------------- 8


def _tree(d):
    out = {}
    for root, _, names in os.walk(d):
        for n in names:
            p = os.path.join(root, n)
            with open(p, "rb") as fh:
                out[os.path.relpath(p, d)] = fh.read()
    return out


def _without_out_dir(files):
    m = json.loads(files.pop("manifest.json"))
    m.pop("out_dir")
    return files, m


def test_criterion_8_determinism(tmp_path):
    checks = []
    for label, argv in (("simulate", ["simulate", "--scene", "toy_pouring", "--steps", "4", "--seed", "7"]),
                        ("gas_simulate", ["simulate", "--scene", "gas_heating", "--steps", "2", "--seed", "1"]),
                        ("validate", ["validate", "bounce"]),
                        ("optimize", ["optimize", "--scene", "free_particle", "--method", "cma-es",
                                      "--budget", "12", "--seed", "3"])):
        runs = []
        for k in range(2):
            out = tmp_path / f"{label}{k}"
            code = main(argv + ["--out", str(out), "--deterministic"])
            files, man = _without_out_dir(_tree(out))
            files.pop("timing.json", None)  # wall times are the only non-reproducible output
            runs.append((code, files, man))
        same = runs[0] == runs[1]
        checks.append((label, same and runs[0][0] == 0, f"{len(runs[0][1])} files identical" if same else "differ"))
    report(8, "determinism", checks)
