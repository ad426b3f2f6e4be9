"""Small scene builders shared by the tests."""
import numpy as np

from fluidopt.scene import build_scene


def one_particle(pos=(0.5, 0.5), vel=(0.0, 0.0), gravity=(0.0, -9.8), kind="Liquid", res=16, dt=1e-3):
    """One particle; it is sampled at the nearest cell centre, so callers
    needing an exact position overwrite ``state.x`` after building."""
    mu = 0.0 if kind == "Liquid" else 1.0
    pos = tuple((np.floor(np.asarray(pos) * res) + 0.5) / res)
    spec = {"config": {"dim": len(pos), "grid_resolution": res, "dt_substep": dt, "gravity": list(gravity)},
            "materials": {"m": {"kind": kind, "mu": mu, "lam": 0.0, "rho": 1.0}},
            "bodies": [{"name": "p", "material": "m", "shape": {"type": "sphere", "radius": 1e-3},
                        "position": list(pos), "particles_per_cell": 1}]}
    return spec


def block(kind, pos=(0.5, 0.5), half=(0.08, 0.08), mu=20.0, lam=20.0, res=16, dt=1e-3, ppc=4, **extra):
    mat = {"kind": kind, "mu": 0.0 if kind == "Liquid" else mu, "lam": lam, "rho": 1.0}
    mat.update(extra)
    return {"config": {"dim": len(pos), "grid_resolution": res, "dt_substep": dt},
            "materials": {"m": mat},
            "bodies": [{"name": "b", "material": "m", "shape": {"type": "box", "half_extents": list(half)},
                        "position": list(pos), "particles_per_cell": ppc}]}


def build(spec, seed=0):
    spec = dict(spec)
    spec["seed"] = seed
    return build_scene(None, spec)


def pairwise(x):
    return np.linalg.norm(x[:, None] - x[None], axis=-1)
