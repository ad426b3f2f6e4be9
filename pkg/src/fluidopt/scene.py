"""Scene construction from a declarative description (YAML file or dict).

Schema (all keys optional unless noted)::

    config:     SimConfig fields (dim, grid_resolution, gas_resolution,
                domain_lo, domain_hi, dt_substep, substeps_per_step, gravity,
                contact_threshold, contact_model, mode, ...)
    materials:  {name: {kind, mu, lam, rho, theta_c, theta_s, sigma_y}}
                (the built-in table names are always available)
    bodies:     - name, material (required), shape {type, ...} (required),
                  position, rotation, particles_per_cell, velocity,
                  angular_velocity
    effectors:  - name, shapes [{type, ..., offset, rotation}], position,
                  rotation, friction, action_mask, controlled,
                  linear_velocity, angular_velocity, gas_solid, mpm_contact
    emitters:   - name, material, nozzle, shape, effector, exit_velocity,
                  particles_per_cell, start_step, interval, count
    gas:        boundaries {x-: wall|inflow|outflow ...}, ambient_temperature,
                kappa_smoke, beta_temp, coupling_strength, projection {...},
                initial {smoke, velocity, temperature},
                sources [{lo, hi, velocity, smoke, temperature, effector}],
                solids [{type, ..., position, rotation}]
    loss:       objective description (see objectives.LossSpec.from_dict)
    optimizer:  optimizer settings (see optimize)
    seed:       integer

Particles are sampled on a lattice aligned with the MPM grid: with ``ppc``
particles per cell (a perfect square/cube) each cell holds ``ppc^(1/d)``
points per axis at sub-cell centres.
"""
import copy

import numpy as np
import yaml

from .config import GasConfig, ProjectionSolve, SimConfig
from .errors import SceneError
from .gas import GasGrid, GasSetup, new_gas_state
from .materials import KIND_CODE, TABLE, MaterialParams
from .sdf import HalfSpace, SdfPrimitive, make_shape, rotation_from
from .state import Effector, EffectorShape, Emitter, GasSource, Scene, SimState

CONFIG_KEYS = ("dim", "grid_resolution", "gas_resolution", "domain_lo", "domain_hi", "dt_substep",
               "substeps_per_step", "gravity", "boundary_cells", "contact_threshold", "contact_model",
               "mass_epsilon", "cfl_factor", "mode")


def load_scene_file(path):
    """Parse a YAML scene file into a plain dict (errors carry the line number)."""
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        raise SceneError(f"cannot parse {path}: {getattr(err, 'problem', err)}",
                         line=None if mark is None else mark.line + 1) from err
    except OSError as err:
        raise SceneError(f"cannot read {path}: {err}") from err
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise SceneError("scene file must contain a mapping at top level")
    return data


def make_config(spec):
    spec = dict(spec or {})
    unknown = set(spec) - set(CONFIG_KEYS)
    if unknown:
        raise SceneError(f"unknown config keys: {sorted(unknown)}")
    return SimConfig(**spec)


def _materials(spec):
    mats = {k: v for k, v in TABLE.items()}
    for name, m in (spec or {}).items():
        m = dict(m)
        try:
            mats[name] = MaterialParams(kind=m.pop("kind"), mu=float(m.pop("mu", 0.0)), lam=float(m.pop("lam", m.pop("lambda", 0.0))),
                                        rho=float(m.pop("rho", 1.0)), **{k: float(v) for k, v in m.items()})
        except (KeyError, TypeError) as err:
            raise SceneError(f"bad material {name!r}: {err}", shape_id=name) from err
    return mats


def per_axis(ppc, dim):
    k = int(round(ppc ** (1.0 / dim)))
    if k < 1 or k**dim != ppc:
        raise SceneError(f"particles_per_cell={ppc} is not a perfect power for dim={dim}")
    return k


def shape_bounds(shape, pos, rot):
    """Axis-aligned bounds of a placed shape (None for unbounded shapes)."""
    d = len(pos)
    if isinstance(shape, HalfSpace):
        return None
    name = type(shape).__name__
    if name == "Sphere":
        r = np.full(d, shape.radius)
        return pos - r, pos + r
    if name == "Box":
        ext = np.abs(rot) @ np.asarray(shape.half_extents)
        return pos - ext, pos + ext
    if name == "Capsule":
        pts = np.stack([np.asarray(shape.a), np.asarray(shape.b)]) @ rot.T + pos
        return pts.min(axis=0) - shape.radius, pts.max(axis=0) + shape.radius
    if name == "Cylinder":
        h = np.full(d, shape.radius)
        h[1] = shape.half_height
        ext = np.abs(rot) @ h
        return pos - ext, pos + ext
    raise SceneError(f"cannot bound shape {name}")


def sample_lattice(prim, cfg, ppc, name=None):
    """Grid-aligned lattice points strictly inside ``prim``."""
    k = per_axis(ppc, cfg.dim)
    b = shape_bounds(prim.shape, prim.translation, prim.rotation)
    if b is None:
        raise SceneError("unbounded shapes cannot be sampled", shape_id=name)
    lo, hi = b
    tol = 1e-9
    if np.any(lo < cfg.domain_lo - tol) or np.any(hi > cfg.domain_hi + tol):
        raise SceneError("shape lies outside the domain bounds", shape_id=name)
    h = cfg.dx / k
    i0 = np.floor((lo - cfg.domain_lo) / h).astype(int)
    i1 = np.ceil((hi - cfg.domain_lo) / h).astype(int)
    axes = [cfg.domain_lo[a] + (np.arange(i0[a], i1[a]) + 0.5) * h for a in range(cfg.dim)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, cfg.dim)
    if len(pts) == 0:
        return pts
    dist, _ = prim.evaluate(pts)
    return pts[dist < 0]


def _vec(v, d, default=0.0, what="vector"):
    if v is None:
        return np.full(d, default, float)
    a = np.asarray(v, float).reshape(-1)
    if a.shape != (d,):
        raise SceneError(f"{what} needs {d} components")
    return a


def _spin(v, d):
    if v is None:
        return np.zeros(1 if d == 2 else 3)
    return np.atleast_1d(np.asarray(v, float))


def build_scene(config, spec=None):
    """Build the initial SimState from a config and a scene description."""
    spec = copy.deepcopy(spec or {})
    if isinstance(config, dict):
        cfg = make_config(config)
    elif config is None:
        cfg = make_config(spec.get("config"))
    else:
        cfg = config
    d = cfg.dim
    mats = _materials(spec.get("materials"))
    mat_names, mat_list = [], []

    def mat_index(name, owner):
        if name not in mats:
            raise SceneError(f"unknown material {name!r}", shape_id=owner)
        if name not in mat_names:
            mat_names.append(name)
            mat_list.append(mats[name])
        return mat_names.index(name)

    xs, vs, mids, bids, acts, vols = [], [], [], [], [], []
    body_names = []
    for bi, body in enumerate(spec.get("bodies") or []):
        name = body.get("name", f"body{bi}")
        if "material" not in body or "shape" not in body:
            raise SceneError("bodies need 'material' and 'shape'", shape_id=name)
        m = mat_index(body["material"], name)
        pos = _vec(body.get("position"), d, what="position")
        prim = SdfPrimitive(make_shape(body["shape"], d), pos, rotation_from(body.get("rotation"), d))
        ppc = int(body.get("particles_per_cell", 4 if d == 2 else 8))
        pts = sample_lattice(prim, cfg, ppc, name)
        if len(pts) == 0:
            raise SceneError("shape produced zero particles", shape_id=name)
        vel = np.broadcast_to(_vec(body.get("velocity"), d, what="velocity"), pts.shape).copy()
        w = _spin(body.get("angular_velocity"), d)
        if np.any(w != 0):
            y = pts - pts.mean(axis=0)
            vel += np.stack([-w[0] * y[:, 1], w[0] * y[:, 0]], axis=1) if d == 2 else np.cross(w, y)
        body_names.append(name)
        xs.append(pts)
        vs.append(vel)
        mids.append(np.full(len(pts), m))
        bids.append(np.full(len(pts), len(body_names) - 1))
        acts.append(np.zeros(len(pts), int))
        vols.append(np.full(len(pts), cfg.dx**d / ppc))

    effectors = []
    for ei, es in enumerate(spec.get("effectors") or []):
        name = es.get("name", f"effector{ei}")
        shapes = []
        for sh in es.get("shapes") or ([es["shape"]] if "shape" in es else []):
            shapes.append(EffectorShape(make_shape(sh, d), _vec(sh.get("offset"), d, what="offset"),
                                        rotation_from(sh.get("rotation"), d)))
        if not shapes:
            raise SceneError("effector needs at least one shape", shape_id=name)
        mask = es.get("action_mask", [True] * 6)
        friction = es.get("friction", 0.0)
        friction = np.inf if friction in ("inf", "sticky") else float(friction)
        effectors.append(Effector(name, shapes, _vec(es.get("position"), d, what="position"),
                                  rotation_from(es.get("rotation"), d), friction, tuple(mask),
                                  _vec(es.get("linear_velocity"), d, what="linear_velocity"),
                                  _spin(es.get("angular_velocity"), d), bool(es.get("controlled", False)),
                                  bool(es.get("gas_solid", True)), bool(es.get("mpm_contact", True))))
    eff_names = [e.name for e in effectors]

    def eff_index(ref, owner):
        if ref is None:
            return None
        if ref not in eff_names:
            raise SceneError(f"unknown effector {ref!r}", shape_id=owner)
        return eff_names.index(ref)

    emitters = []
    offset = sum(len(a) for a in xs)
    for mi, em in enumerate(spec.get("emitters") or []):
        name = em.get("name", f"emitter{mi}")
        m = mat_index(em.get("material"), name)
        nozzle = _vec(em.get("nozzle"), d, what="nozzle")
        e = eff_index(em.get("effector"), name)
        ppc = int(em.get("particles_per_cell", 4 if d == 2 else 8))
        # sample the puff shape around the origin, then shift to the lattice
        shape = make_shape(em.get("shape", {"type": "sphere", "radius": cfg.dx}), d)
        centre = cfg.domain_lo + 0.5 * (cfg.domain_hi - cfg.domain_lo)
        pts = sample_lattice(SdfPrimitive(shape, centre, np.eye(d)), cfg, ppc, name) - centre
        if len(pts) == 0:
            raise SceneError("emitter puff produced zero particles", shape_id=name)
        count = int(em.get("count", 1))
        start = int(em.get("start_step", 0))
        interval = int(em.get("interval", 1))
        n = len(pts) * count
        ids = np.arange(offset, offset + n)
        offs = np.tile(pts, (count, 1))
        steps = np.repeat(start + interval * np.arange(count), len(pts))
        ev = _vec(em.get("exit_velocity"), d, what="exit_velocity")
        if e is None:
            park = nozzle + offs
        else:
            eff = effectors[e]
            park = eff.position + (nozzle + offs) @ eff.rotation.T
        body_names.append(name)
        xs.append(park)
        vs.append(np.zeros((n, d)))
        mids.append(np.full(n, m))
        bids.append(np.full(n, len(body_names) - 1))
        acts.append(steps)
        vols.append(np.full(n, cfg.dx**d / ppc))
        emitters.append(Emitter(ids, offs, ev, nozzle, e))
        offset += n

    if xs:
        x = np.concatenate(xs)
        v = np.concatenate(vs)
        material = np.concatenate(mids).astype(int)
        body = np.concatenate(bids).astype(int)
        act = np.concatenate(acts).astype(int)
        vol0 = np.concatenate(vols)
    else:
        x = np.zeros((0, d))
        v = np.zeros((0, d))
        material = np.zeros(0, int)
        body = np.zeros(0, int)
        act = np.zeros(0, int)
        vol0 = np.zeros(0)
    rho = np.array([mat_list[i].rho for i in material]) if len(material) else np.zeros(0)
    mass = rho * vol0

    gas_setup, gas_state = None, None
    if spec.get("gas") is not None:
        gas_setup, gas_state = _build_gas(spec["gas"], cfg, eff_index)

    scene = Scene(cfg, mat_list, mat_names, body_names, mass, vol0, material, body, act, x.copy(),
                  effectors, emitters, gas_setup, int(spec.get("seed", 0)))
    for b, idx in scene.rigid_bodies.items():
        if len(idx) < d:
            raise SceneError("rigid body needs at least dim particles", shape_id=body_names[b])
    n = len(x)
    state = SimState(scene, 0, x, v, np.broadcast_to(np.eye(d), (n, d, d)).copy(), np.zeros((n, d, d)),
                     np.array([e.position for e in effectors]).reshape(len(effectors), d),
                     np.array([e.rotation for e in effectors]).reshape(len(effectors), d, d), gas_state)
    scene.spec = spec
    return state


def _build_gas(gs, cfg, eff_index):
    d = cfg.dim
    if cfg.gas_resolution is None:
        raise SceneError("a gas block needs config.gas_resolution")
    proj = ProjectionSolve(**(gs.get("projection") or {}))
    gcfg = GasConfig(boundaries=gs.get("boundaries") or {}, ambient_temperature=float(gs.get("ambient_temperature", 0.0)),
                     kappa_smoke=float(gs.get("kappa_smoke", 0.0)), beta_temp=float(gs.get("beta_temp", 1.0)),
                     coupling_strength=float(gs.get("coupling_strength", 0.0)), projection=proj,
                     vertical_axis=int(gs.get("vertical_axis", 1)))
    solids = []
    for si, s in enumerate(gs.get("solids") or []):
        solids.append(SdfPrimitive(make_shape(s, d), _vec(s.get("position"), d, what="position"),
                                   rotation_from(s.get("rotation"), d)))
    grid = GasGrid(cfg.domain_lo, cfg.gas_dx, cfg.gas_shape, gcfg, solids)
    sources = []
    for si, s in enumerate(gs.get("sources") or []):
        lo = _vec(s.get("lo"), d, what="source lo")
        hi = _vec(s.get("hi"), d, what="source hi")
        c = grid.centers
        inside = np.all((c >= lo) & (c <= hi), axis=1)
        cells = np.argwhere(inside.reshape(grid.shape))
        if len(cells) == 0:
            raise SceneError("gas source covers no cells", shape_id=s.get("name", f"source{si}"))
        vel = s.get("velocity")
        sources.append(GasSource(cells, None if vel is None else _vec(vel, d), s.get("smoke"), s.get("temperature"),
                                 eff_index(s.get("effector"), s.get("name"))))
    init = gs.get("initial") or {}
    state = new_gas_state(grid, init.get("temperature", gcfg.ambient_temperature), init.get("smoke", 0.0),
                          init.get("velocity"))
    return GasSetup(grid, gcfg, sources, solids), state


def load_scene(path):
    """Read a scene file and build its initial state.  Returns (state, spec)."""
    spec = load_scene_file(path)
    return build_scene(None, spec), spec
