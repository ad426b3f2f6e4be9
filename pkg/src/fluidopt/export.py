"""Plain-text outputs: run manifests, per-step frame CSVs with JSON field
sidecars, metrics series and optimiser histories."""
import csv
import hashlib
import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from . import __version__


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        obj = obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def config_hash(spec, extra=None):
    """Short hash of a scene description plus run settings."""
    blob = json.dumps(_jsonable({"scene": spec, "extra": extra or {}}), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class RunManifest:
    command: str
    scene_path: str
    seed: int
    mode: str
    out_dir: str
    version: str
    config_hash: str

    @classmethod
    def create(cls, command, scene_path, spec, seed, mode, out_dir, settings=None):
        h = config_hash(spec, {"command": command, "seed": seed, "mode": mode, **(settings or {})})
        return cls(command, str(scene_path), int(seed), mode, str(out_dir), __version__, h)

    def write(self):
        os.makedirs(self.out_dir, exist_ok=True)
        dump_json(asdict(self), os.path.join(self.out_dir, "manifest.json"))
        return self


def _fmt(x):
    return repr(float(x))


def write_frame(path, state, manifest_hash):
    """One row per particle: id, body id, position, velocity."""
    d = state.scene.config.dim
    axes = "xyz"[:d]
    with open(path, "w", newline="") as fh:
        fh.write(f"# manifest {manifest_hash} step {state.step}\n")
        w = csv.writer(fh)
        w.writerow(["particle_id", "body_id"] + list(axes) + ["v" + a for a in axes])
        active = state.active()
        for i in np.flatnonzero(active):
            w.writerow([int(i), int(state.scene.body[i])] + [_fmt(c) for c in state.x[i]]
                       + [_fmt(c) for c in state.v[i]])


def write_fields(path, state, manifest_hash):
    """Gas fields of the current state (full arrays) as a JSON sidecar."""
    g = state.gas
    data = {"manifest": manifest_hash, "step": state.step}
    if g is not None:
        grid = state.scene.gas.grid
        data.update(shape=list(grid.shape), lo=grid.lo, h=grid.h, smoke=g.smoke, temperature=g.temp,
                    velocity=[u for u in g.u])
    dump_json(data, path)


class MetricsWriter:
    """Per-step totals (mass, momentum, kinetic energy) as a CSV series."""

    def __init__(self, path, dim, manifest_hash):
        self.fh = open(path, "w", newline="")
        self.fh.write(f"# manifest {manifest_hash}\n")
        self.w = csv.writer(self.fh)
        self.w.writerow(["step", "substep", "mass"] + [f"momentum_{a}" for a in "xyz"[:dim]] + ["kinetic_energy"])

    def write(self, step, state):
        self.w.writerow([step, state.step, _fmt(state.total_mass())] + [_fmt(p) for p in state.momentum()]
                        + [_fmt(state.kinetic_energy())])

    def close(self):
        self.fh.close()


def write_rows(path, rows, manifest_hash, columns=None):
    """Write dict rows as CSV (columns default to the first row's keys)."""
    columns = columns or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        fh.write(f"# manifest {manifest_hash}\n")
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (_fmt(v) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})


def read_rows(path):
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))
