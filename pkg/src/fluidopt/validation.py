"""Physical validation scenarios with quantitative pass/fail checks.

Each suite builds a small scene, runs it, and returns a JSON-ready report
``{"suite", "passed", "checks": {name: {"value", "limit", "passed"}}, ...}``.
"""
import time

import numpy as np

from . import gas as gas_mod
from .scene import build_scene
from .step import mpm_substep


def _check(value, limit, ok):
    return {"value": _plain(value), "limit": _plain(limit), "passed": bool(ok)}


def _plain(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, (list, tuple)):
        return [_plain(a) for a in v]
    return v


def _report(name, checks, t0, **extra):
    out = {"suite": name, "passed": all(c["passed"] for c in checks.values()), "checks": checks,
           "wall_time": time.perf_counter() - t0}
    out.update({k: _plain(v) for k, v in extra.items()})
    return out


def run(state, n, every=0, probe=None):
    """Advance ``n`` substeps; call ``probe(state)`` every ``every`` substeps."""
    samples = []
    if every and probe is not None:
        samples.append(probe(state))
    for k in range(n):
        state, _ = mpm_substep(state)
        if every and probe is not None and (k + 1) % every == 0:
            samples.append(probe(state))
    return state, samples


def _com(state, ids):
    m = state.scene.mass[ids]
    return (m[:, None] * state.x[ids]).sum(axis=0) / m.sum()


def _com_vel(state, ids):
    m = state.scene.mass[ids]
    return (m[:, None] * state.v[ids]).sum(axis=0) / m.sum()


# ---------------------------------------------------------------- momentum

def momentum_scene():
    return {
        "config": {"dim": 2, "grid_resolution": 32, "dt_substep": 2.5e-4, "gravity": [0.0, 0.0]},
        "materials": {"jelly": {"kind": "Elastic", "mu": 100.0, "lam": 100.0, "rho": 1.0}},
        "bodies": [
            {"name": "left", "material": "jelly", "shape": {"type": "box", "half_extents": [0.08, 0.08]},
             "position": [0.3, 0.5], "velocity": [1.0, 0.0]},
            {"name": "right", "material": "jelly", "shape": {"type": "box", "half_extents": [0.08, 0.08]},
             "position": [0.7, 0.5], "velocity": [-1.0, 0.2]},
        ],
    }


def suite_momentum(seed=0, substeps=1000):
    """Two elastic blocks collide in a closed, gravity-free, frictionless box."""
    t0 = time.perf_counter()
    s = build_scene(None, momentum_scene())
    p0 = s.momentum()
    # reference scale: total absolute momentum (the net x momentum cancels)
    scale = float(np.abs(s.scene.mass[:, None] * s.v).sum())
    s, _ = run(s, substeps)
    drift = float(np.linalg.norm(s.momentum() - p0) / scale)
    left = s.scene.body_particles("left")
    exchanged = _com_vel(s, left)[0] < 0.5
    return _report("momentum", {"relative_momentum_drift": _check(drift, 1e-9, drift <= 1e-9),
                                "collision_happened": _check(bool(exchanged), True, exchanged)},
                   t0, initial_momentum=p0, final_momentum=s.momentum(), substeps=substeps)


# ---------------------------------------------------------------- volume

def volume_scene():
    # the block spans the floor between the wall bands, i.e. it starts at rest
    return {
        "config": {"dim": 2, "grid_resolution": 16, "dt_substep": 2e-3},
        "bodies": [{"name": "water", "material": "water",
                    "shape": {"type": "box", "half_extents": [0.375, 0.125]},
                    "position": [0.5, 0.25], "particles_per_cell": 4}],
    }


def occupied_cells(state, ppc=4):
    """Cells holding at least half their rest particle count."""
    cfg = state.scene.config
    idx = np.floor((state.x - cfg.domain_lo) / cfg.dx).astype(int)
    _, counts = np.unique(idx, axis=0, return_counts=True)
    return int(np.sum(counts >= ppc / 2))


def suite_volume(seed=0, substeps=10000):
    """A resting liquid block keeps its occupied-cell count within 10%."""
    t0 = time.perf_counter()
    s = build_scene(None, volume_scene())
    n0 = occupied_cells(s)
    s, counts = run(s, substeps, every=500, probe=occupied_cells)
    counts = np.array(counts)
    drift = float(np.max(np.abs(counts - n0)) / n0)
    finite = bool(np.all(np.isfinite(s.x)))
    return _report("volume", {"max_relative_drift": _check(drift, 0.1, drift <= 0.1),
                              "finite": _check(finite, True, finite)},
                   t0, occupied=counts, substeps=substeps)


# ---------------------------------------------------------------- buoyancy

def buoyancy_scene():
    return {
        "config": {"dim": 2, "grid_resolution": 32, "dt_substep": 1e-3},
        "materials": {"cork": {"kind": "Elastic", "mu": 40.0, "lam": 40.0, "rho": 0.5}},
        "bodies": [
            {"name": "pool", "material": "water", "shape": {"type": "box", "half_extents": [0.40625, 0.25]},
             "position": [0.5, 0.34375]},
            {"name": "cork", "material": "cork", "shape": {"type": "box", "half_extents": [0.0625, 0.0625]},
             "position": [0.5, 0.21875]},
        ],
    }


def _carve(state, keep_body, cut_body):
    """Indices of ``cut_body`` particles sitting on ``keep_body``'s lattice sites.

    Bodies sample the same grid-aligned lattice, so an overlapping body
    shares sites exactly with the one it is embedded in.
    """
    from scipy.spatial import cKDTree

    sc = state.scene
    keep = sc.body_particles(keep_body)
    cut = sc.body_particles(cut_body)
    d, _ = cKDTree(state.x[keep]).query(state.x[cut])
    return cut[d < 1e-6 * sc.config.dx]


def _without(state, drop):
    keep = np.setdiff1d(np.arange(state.scene.n_particles), drop)
    return subset_state(state, keep)


def subset_state(state, keep):
    from .state import Scene, SimState

    sc = state.scene
    scene = Scene(sc.config, sc.materials, sc.material_names, sc.body_names, sc.mass[keep], sc.vol0[keep],
                  sc.material[keep], sc.body[keep], sc.act_step[keep], sc.rest[keep], sc.effectors, sc.emitters,
                  sc.gas, sc.seed)
    scene.spec = getattr(sc, "spec", None)
    return SimState(scene, state.step, state.x[keep], state.v[keep], state.F[keep], state.C[keep],
                    state.eff_pos, state.eff_rot, state.gas)


def suite_buoyancy(seed=0, substeps=3000, transient=1000, window=1000, every=100):
    """A half-density block released at the bottom of a pool rises.

    The pool starts uncompressed and sloshes for the first second; the
    height must then increase strictly over the following ``window``
    substeps, and end well above the release height.
    """
    t0 = time.perf_counter()
    s = build_scene(None, buoyancy_scene())
    s = _without(s, _carve(s, "cork", "pool"))
    cork = s.scene.body_particles("cork")
    s, heights = run(s, substeps, every=every, probe=lambda st: _com(st, cork)[1])
    h = np.array(heights)
    seg = h[transient // every:(transient + window) // every + 1]
    rising = bool(np.all(np.diff(seg) > 0))
    rise = float(h[-1] - h[0])
    return _report("buoyancy", {"monotone_rise_after_transient": _check(rising, True, rising),
                                "net_rise": _check(rise, 0.1, rise > 0.1)},
                   t0, heights=h, substeps=substeps, sample_every=every)


# ---------------------------------------------------------------- Karman vortex street / gas divergence

def karman_scene(resolution=64, cg_tolerance=1e-9):
    return {
        "config": {"dim": 2, "grid_resolution": resolution // 2, "gas_resolution": resolution,
                   "domain_lo": [0.0, 0.0], "domain_hi": [2.0, 1.0], "dt_substep": 0.01},
        "gas": {"boundaries": {"x-": {"type": "inflow", "velocity": [1.0, 0.0], "smoke": 1.0},
                               "x+": "outflow", "y-": "wall", "y+": "wall"},
                "beta_temp": 0.0, "kappa_smoke": 0.0,
                "initial": {"velocity": [1.0, 0.0]},
                "projection": {"kind": "cg", "iterations": 500, "tolerance": cg_tolerance},
                "solids": [{"type": "sphere", "radius": 0.08, "position": [0.45, 0.52]}]},
    }


def dominant_frequency(signal, dt):
    """(frequency, share of non-DC spectral power in the peak bin and its neighbours)."""
    x = np.asarray(signal, float)
    x = x - x.mean()
    if not np.any(x):
        return 0.0, 0.0
    win = np.hanning(len(x))
    p = np.abs(np.fft.rfft(x * win)) ** 2
    f = np.fft.rfftfreq(len(x), dt)
    p[0] = 0.0
    k = int(np.argmax(p))
    share = float(p[max(k - 1, 1):k + 2].sum() / p.sum())
    return float(f[k]), share


def suite_karman(seed=0, substeps=1500, transient=500, resolution=64):
    """Flow past a cylinder: transverse velocity in the wake oscillates at one frequency.

    Also checks the post-projection divergence of every step.
    """
    t0 = time.perf_counter()
    s = build_scene(None, karman_scene(resolution))
    grid = s.scene.gas.grid
    fluid = None
    probe_pt = np.array([[1.0, 0.5]])
    vy = []
    max_div = 0.0
    for k in range(substeps):
        s, rec = mpm_substep(s)
        if fluid is None:
            owner = gas_mod.rasterize_solid_mask(grid, s.scene.effectors, [])
            fluid = owner == gas_mod.FLUID
        div = gas_mod.divergence(s.gas.u, fluid, grid.h)
        max_div = max(max_div, float(np.max(np.abs(div))))
        if k >= transient:
            samp = gas_mod.Sampler(probe_pt, grid.lo, grid.h, grid.face_shape[1], 1)
            vy.append(float(samp(s.gas.u[1])[0]))
    dt = s.scene.config.dt_substep
    freq, share = dominant_frequency(vy, dt)
    amp = float(np.std(vy))
    # a trend or a single swing is not shedding: demand three cycles in the window
    f_min = 3.0 / (len(vy) * dt)
    return _report("karman", {"max_divergence": _check(max_div, 1e-4, max_div <= 1e-4),
                              "dominant_frequency": _check(freq, f_min, freq >= f_min),
                              "peak_power_share": _check(share, 0.3, share >= 0.3),
                              "wake_amplitude": _check(amp, 1e-2, amp > 1e-2)},
                   t0, probe_vy=vy, strouhal=freq * 0.16 / 1.0, substeps=substeps)


# ---------------------------------------------------------------- Magnus effect

def magnus_scene(spin):
    return {
        "config": {"dim": 2, "grid_resolution": 32, "dt_substep": 1e-3, "gravity": [0.0, 0.0]},
        "materials": {"ball": {"kind": "Rigid", "mu": 100.0, "lam": 100.0, "rho": 1.0}},
        "bodies": [
            {"name": "pool", "material": "water", "shape": {"type": "box", "half_extents": [0.40625, 0.40625]},
             "position": [0.5, 0.5]},
            {"name": "ball", "material": "ball", "shape": {"type": "sphere", "radius": 0.08},
             "position": [0.25, 0.5], "velocity": [2.0, 0.0], "angular_velocity": [spin]},
        ],
    }


def _magnus_run(spin, substeps):
    spec = magnus_scene(spin)
    s = build_scene(None, spec)
    s = _without(s, _carve(s, "ball", "pool"))
    ball = s.scene.body_particles("ball")
    y0 = _com(s, ball)[1]
    s, _ = run(s, substeps)
    return float(_com(s, ball)[1] - y0)


def suite_magnus(seed=0, substeps=200, spins=(10.0, 20.0, 40.0)):
    """A spinning ball moving through liquid deflects sideways; more spin, more deflection."""
    t0 = time.perf_counter()
    base = _magnus_run(0.0, substeps)
    defl = np.array([_magnus_run(w, substeps) - base for w in spins])
    neg = np.array([_magnus_run(-spins[-1], substeps) - base])
    sign_ok = bool(np.all(defl > 0) and neg[0] < 0)
    grow_ok = bool(np.all(np.diff(np.abs(defl)) > 0))
    return _report("magnus", {"deflection_sign_matches_spin": _check(sign_ok, True, sign_ok),
                              "deflection_grows_with_spin": _check(grow_ok, True, grow_ok)},
                   t0, spins=list(spins), deflections=defl, reverse_spin_deflection=neg, baseline=base)


# ---------------------------------------------------------------- Rayleigh-Taylor

def rt_scene(heavy_on_top=True):
    top, bottom = ("heavy", "light") if heavy_on_top else ("light", "heavy")
    return {
        "config": {"dim": 2, "grid_resolution": 32, "dt_substep": 1e-3},
        "materials": {"heavy": {"kind": "Liquid", "lam": 300.0, "rho": 3.0},
                      "light": {"kind": "Liquid", "lam": 300.0, "rho": 1.0}},
        "bodies": [
            {"name": "bottom", "material": bottom, "shape": {"type": "box", "half_extents": [0.40625, 0.125]},
             "position": [0.5, 0.21875]},
            {"name": "top", "material": top, "shape": {"type": "box", "half_extents": [0.40625, 0.125]},
             "position": [0.5, 0.46875]},
        ],
    }


def interface_deviation(state, top, bottom, y_int):
    """Mean penetration depth of each layer past the initial interface height."""
    yt = state.x[top, 1]
    yb = state.x[bottom, 1]
    return float(np.maximum(y_int - yt, 0).mean() + np.maximum(yb - y_int, 0).mean())


def _rt_run(heavy_on_top, substeps, seed, every):
    s = build_scene(None, rt_scene(heavy_on_top))
    top = s.scene.body_particles("top")
    bottom = s.scene.body_particles("bottom")
    y_int = 0.34375
    rng = np.random.default_rng(seed)
    # seed the instability: a small single-mode vertical velocity near the interface
    phase = rng.uniform(0, 2 * np.pi)
    near = np.abs(s.x[:, 1] - y_int) < 0.1
    s.v[near, 1] += 0.05 * np.cos(2 * np.pi * 2 * (s.x[near, 0] - 0.09375) / 0.8125 + phase)
    s, dev = run(s, substeps, every, lambda st: interface_deviation(st, top, bottom, y_int))
    return np.array(dev)


def suite_rayleigh_taylor(seed=0, substeps=600, every=50):
    """Heavy-over-light layers mix (growing deviation); light-over-heavy stays layered."""
    t0 = time.perf_counter()
    unstable = _rt_run(True, substeps, seed, every)
    stable = _rt_run(False, substeps, seed, every)
    grows = bool(unstable[-1] > 2.0 * max(unstable[1], 1e-12) and unstable[-1] > unstable[len(unstable) // 2])
    beats = bool(unstable[-1] > 2.0 * stable[-1])
    return _report("rayleigh_taylor", {"deviation_grows": _check(float(unstable[-1]), 2.0 * unstable[1], grows),
                                       "exceeds_stable_control": _check(float(unstable[-1]), 2.0 * float(stable[-1]),
                                                                        beats)},
                   t0, unstable=unstable, stable=stable)


# ---------------------------------------------------------------- dam break

def dam_break_scene():
    return {
        "config": {"dim": 2, "grid_resolution": 16, "dt_substep": 2e-3},
        "bodies": [{"name": "water", "material": "water", "shape": {"type": "box", "half_extents": [0.125, 0.25]},
                    "position": [0.3125, 0.4375]}],
    }


def suite_dam_break(seed=0, substeps=2000, every=10):
    """A water column collapses; no NaN, and the kinetic energy over the last
    tenth of the run stays below 10% of its peak."""
    t0 = time.perf_counter()
    s = build_scene(None, dam_break_scene())
    finite = [True]

    def probe(st):
        finite[0] = finite[0] and bool(np.all(np.isfinite(st.x)) and np.all(np.isfinite(st.v)))
        return st.kinetic_energy()

    s, ke = run(s, substeps, every, probe)
    ke = np.array(ke)
    tail = ke[-max(1, len(ke) // 10):]
    ratio = float(tail.max() / ke.max()) if ke.max() > 0 else 0.0
    return _report("dam_break", {"no_nan": _check(finite[0], True, finite[0]),
                                 "late_to_peak_kinetic_energy": _check(ratio, 0.1, ratio < 0.1)},
                   t0, kinetic_energy=ke, substeps=substeps)


# ---------------------------------------------------------------- bounce

def bounce_scene(thetas):
    bodies = []
    mats = {}
    for i, th in enumerate(thetas):
        mats[f"m{i}"] = {"kind": "Plastic", "mu": 100.0, "lam": 100.0, "rho": 1.0, "theta_c": th, "theta_s": th}
        bodies.append({"name": f"b{i}", "material": f"m{i}", "shape": {"type": "box", "half_extents": [0.0625, 0.0625]},
                       "position": [0.2 + 0.3 * i, 0.5]})
    return {"config": {"dim": 2, "grid_resolution": 32, "dt_substep": 5e-4}, "materials": mats, "bodies": bodies}


def suite_bounce(seed=0, substeps=1200, thetas=(0.5, 0.02, 0.005)):
    """Three blocks with tighter plastic clamps bounce with less energy."""
    t0 = time.perf_counter()
    s = build_scene(None, bounce_scene(thetas))
    ids = [s.scene.body_particles(f"b{i}") for i in range(len(thetas))]
    fell = [False] * len(thetas)
    hit = [False] * len(thetas)
    post = np.zeros(len(thetas))
    for k in range(substeps):
        s, _ = mpm_substep(s)
        for i, b in enumerate(ids):
            vy = _com_vel(s, b)[1]
            fell[i] = fell[i] or vy < -0.5
            if fell[i] and not hit[i] and vy > 0:
                hit[i] = True
            if hit[i]:
                m = s.scene.mass[b].sum()
                post[i] = max(post[i], 0.5 * m * max(vy, 0.0) ** 2)
    mono = bool(np.all(np.diff(post) < 0))
    bounced = bool(all(hit))
    return _report("bounce", {"all_bounced": _check(bounced, True, bounced),
                              "energy_decreases_with_plasticity": _check(post, "decreasing", mono)},
                   t0, thetas=list(thetas), rebound_energy=post)


SUITES = {
    "karman": suite_karman,
    "magnus": suite_magnus,
    "buoyancy": suite_buoyancy,
    "volume": suite_volume,
    "momentum": suite_momentum,
    "bounce": suite_bounce,
    "rayleigh_taylor": suite_rayleigh_taylor,
    "dam_break": suite_dam_break,
}


def run_suite(name, seed=0, **kw):
    if name not in SUITES:
        raise KeyError(f"unknown validation suite {name!r}; choose from {sorted(SUITES)}")
    return SUITES[name](seed=seed, **kw)
