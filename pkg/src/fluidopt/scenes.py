"""Built-in desk-scale scenes: optimisation toys and validation set-ups.

Each builder returns a plain scene dict (the same schema as a YAML scene
file).  ``toy_problem`` bundles a toy scene with its loss and a seeded
initial trajectory.
"""
import copy

import numpy as np

from .objectives import LossSpec
from .optimize import ActionTrajectory
from .scene import build_scene


def free_particle():
    """One particle carried by a sticky kinematic box; gravity off.

    The box covers the particle's whole kernel stencil so every node it
    reads moves with the box: the particle velocity equals the commanded
    velocity exactly and the dynamics are linear in the actions.
    """
    return {
        "config": {"dim": 2, "grid_resolution": 16, "dt_substep": 1e-3, "gravity": [0.0, 0.0],
                   "contact_threshold": 3.0},
        "materials": {"dust": {"kind": "Liquid", "mu": 0.0, "lam": 0.0, "rho": 1.0}},
        "bodies": [{"name": "p", "material": "dust", "shape": {"type": "sphere", "radius": 0.01},
                    "position": [0.5 + 1 / 64, 0.5 + 1 / 64], "particles_per_cell": 4}],
        "effectors": [{"name": "carrier", "shapes": [{"type": "box", "half_extents": [0.2, 0.2]}],
                       "position": [0.5, 0.5], "friction": "sticky", "controlled": True,
                       "action_mask": [1, 1, 0, 0, 0, 0]}],
        "loss": {"terms": [{"kind": "target_point", "body": "p", "goal": [0.55, 0.45], "squared": True}]},
        "optimizer": {"horizon": 40, "segments": 1, "step_size": 0.05},
        # the loss is quadratic in the action, so central differences are exact
        # and a wide step keeps round-off out of the comparison
        "gradcheck": {"eps": 1e-3},
    }


def toy_gathering():
    """A paddle in a shallow pool pushes a light elastic float towards a goal."""
    return {
        "config": {"dim": 2, "grid_resolution": 16, "dt_substep": 2e-3, "contact_threshold": 3.0},
        "materials": {"float": {"kind": "Elastic", "mu": 40.0, "lam": 40.0, "rho": 0.5}},
        "bodies": [
            {"name": "pool", "material": "water", "shape": {"type": "box", "half_extents": [0.3125, 0.09375]},
             "position": [0.5, 0.28125], "particles_per_cell": 4},
            {"name": "float", "material": "float", "shape": {"type": "box", "half_extents": [0.0625, 0.03125]},
             "position": [0.5, 0.40625], "particles_per_cell": 4},
        ],
        "effectors": [{"name": "paddle", "shapes": [{"type": "box", "half_extents": [0.025, 0.1]}],
                       "position": [0.3, 0.4], "friction": 0.3, "controlled": True,
                       "action_mask": [1, 1, 0, 0, 0, 0]}],
        "loss": {"terms": [{"kind": "target_point", "body": "float", "goal": [0.68, 0.42],
                            "attraction": {"weight": 0.5}}]},
        "optimizer": {"horizon": 120, "segments": 8, "step_size": 0.1, "bounds": [-1.5, 1.5]},
    }


def toy_pouring():
    """A cup holding a heavy layer under a light layer; pour out only the top.

    The light layer should reach a basin to the right while the heavy layer
    stays where it started.  The cup translates along x and rotates.
    """
    wall = 0.04
    return {
        "config": {"dim": 2, "grid_resolution": 24, "dt_substep": 2e-3, "contact_threshold": 3.0},
        "materials": {"light": {"kind": "Liquid", "mu": 0.0, "lam": 150.0, "rho": 0.5},
                      "heavy": {"kind": "Liquid", "mu": 0.0, "lam": 150.0, "rho": 2.0}},
        "bodies": [
            {"name": "heavy", "material": "heavy", "shape": {"type": "box", "half_extents": [0.1, 0.05]},
             "position": [0.4, 0.45], "particles_per_cell": 4},
            {"name": "light", "material": "light", "shape": {"type": "box", "half_extents": [0.1, 0.05]},
             "position": [0.4, 0.55], "particles_per_cell": 4},
        ],
        "effectors": [{"name": "cup", "position": [0.4, 0.5], "friction": 0.0, "controlled": True,
                       "action_mask": [1, 0, 0, 0, 0, 1],
                       "shapes": [
                           {"type": "box", "half_extents": [0.1 + 2 * wall, wall], "offset": [0.0, -0.1 - wall]},
                           {"type": "box", "half_extents": [wall, 0.2], "offset": [-0.1 - wall, 0.05]},
                           {"type": "box", "half_extents": [wall, 0.2], "offset": [0.1 + wall, 0.05]},
                       ]}],
        "loss": {"terms": [
            {"kind": "target_point", "body": "light", "goal": [0.75, 0.25], "weight": 1.0,
             "attraction": {"weight": 0.5}},
            {"kind": "target_point", "body": "heavy", "goal": "initial", "weight": 1.0},
        ]},
        "optimizer": {"horizon": 150, "segments": 6, "step_size": 0.2, "bounds": [-4.0, 4.0]},
    }


def gas_heating():
    """Gas-only room: a movable fan-heater blows warm air at a sensor block."""
    return {
        "config": {"dim": 2, "grid_resolution": 16, "gas_resolution": 16, "dt_substep": 0.01},
        "effectors": [{"name": "heater", "shapes": [{"type": "box", "half_extents": [0.04, 0.04]}],
                       "position": [0.3, 0.5], "controlled": True, "mpm_contact": False,
                       "action_mask": [1, 1, 0, 0, 0, 1]}],
        "gas": {"boundaries": {"x-": "wall", "x+": "wall", "y-": "wall", "y+": "wall"},
                "ambient_temperature": 0.0, "beta_temp": 1.0, "kappa_smoke": 0.0,
                "projection": {"kind": "jacobi", "iterations": 40, "strict": False},
                "sources": [{"lo": [0.36, 0.44], "hi": [0.44, 0.56], "velocity": [1.5, 0.0], "temperature": 1.0,
                             "effector": "heater"}]},
        "loss": {"terms": [{"kind": "air_sensors", "rooms": {"room": {"box": [[0.55, 0.35], [0.8, 0.65]],
                                                                      "target": 0.5}}}]},
        "optimizer": {"horizon": 60, "segments": 3, "step_size": 0.1},
    }


TOYS = {"free_particle": free_particle, "toy_gathering": toy_gathering, "toy_pouring": toy_pouring,
        "gas_heating": gas_heating}


def initial_trajectory(spec, seed=0, scale=0.1):
    """Seeded initial actions: small Gaussian values on the unmasked axes."""
    opt = spec.get("optimizer", {})
    T = int(opt.get("horizon", 100))
    nseg = int(opt.get("segments", 1))
    if T % nseg:
        raise ValueError("horizon must be a multiple of the segment count")
    mask = np.zeros(6)
    for eff in spec.get("effectors", []):
        if eff.get("controlled"):
            mask = np.asarray(eff.get("action_mask", [1] * 6), float)
    bounds = opt.get("bounds")
    lo, hi = (None, None) if bounds is None else (bounds[0], bounds[1])
    rng = np.random.default_rng(seed)
    vals = scale * rng.standard_normal((nseg, 6))
    init = opt.get("initial")
    if init is not None:
        vals += np.broadcast_to(np.asarray(init, float), (nseg, 6))
    return ActionTrajectory(vals, T // nseg, mask, lo, hi)


def toy_problem(name_or_spec, seed=0, scale=0.1, overrides=None):
    """(initial state, LossSpec, initial ActionTrajectory, spec) for a toy scene."""
    spec = TOYS[name_or_spec]() if isinstance(name_or_spec, str) else copy.deepcopy(name_or_spec)
    if overrides:
        spec.setdefault("config", {}).update(overrides)
    spec["seed"] = seed
    state = build_scene(None, spec)
    loss = LossSpec.from_dict(spec.get("loss", {}), state)
    return state, loss, initial_trajectory(spec, seed, scale), spec
