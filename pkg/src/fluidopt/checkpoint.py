"""Snapshot store used to bound memory during the backward sweep.

Snapshots hold exact copies of every dynamic array, so a restored state
replays bit-identically.  On disk each snapshot is an ``.npz`` archive with a
``format_version`` entry.
"""
import math
import os

import numpy as np

from .errors import CheckpointError
from .state import GasState, SimState

FORMAT_VERSION = 1


def state_to_arrays(state):
    out = {k: np.array(v, copy=True) for k, v in state.arrays().items()}
    if state.gas is not None:
        out["gas_solid"] = state.gas.solid.copy()
        out["gas_ndim"] = np.array(len(state.gas.u))
    return out


def arrays_to_state(scene, arr):
    gas = None
    if "gas_smoke" in arr:
        nd = int(arr["gas_ndim"])
        gas = GasState([np.array(arr[f"gas_u{a}"]) for a in range(nd)], np.array(arr["gas_smoke"]),
                       np.array(arr["gas_temp"]), np.array(arr["gas_solid"]))
    return SimState(scene, int(arr["step"]), np.array(arr["x"]), np.array(arr["v"]), np.array(arr["F"]),
                    np.array(arr["C"]), np.array(arr["eff_pos"]), np.array(arr["eff_rot"]), gas)


def expected_snapshots(horizon, stride):
    """Snapshots at 0, stride, 2*stride, ... plus the final index."""
    return math.ceil(horizon / stride) + 1


class CheckpointStore:
    """Snapshots every ``stride`` substeps, in memory or in a directory."""

    def __init__(self, stride, directory=None, capacity=None):
        if stride < 1:
            raise ValueError("stride must be >= 1")
        self.stride = int(stride)
        self.directory = directory
        self.capacity = capacity
        self.snapshots = {}
        if directory is not None:
            os.makedirs(directory, exist_ok=True)

    def __len__(self):
        return len(self.snapshots)

    def indices(self):
        return sorted(self.snapshots)

    def save(self, index, state, final=False):
        if index % self.stride and not final:
            raise CheckpointError(f"index {index} is not a multiple of stride {self.stride}")
        if self.capacity is not None and index not in self.snapshots and len(self.snapshots) >= self.capacity:
            raise CheckpointError(f"checkpoint capacity {self.capacity} exceeded at index {index}")
        arr = state_to_arrays(state)
        if self.directory is None:
            self.snapshots[index] = arr
            return
        path = os.path.join(self.directory, f"snap_{index:08d}.npz")
        try:
            np.savez(path, format_version=np.array(FORMAT_VERSION), **arr)
        except OSError as err:
            raise OSError(f"failed to write checkpoint {index}: {err}") from err
        self.snapshots[index] = path

    def restore(self, index, scene):
        if index not in self.snapshots:
            raise CheckpointError(f"no snapshot stored at index {index}")
        item = self.snapshots[index]
        if isinstance(item, str):
            with np.load(item) as z:
                if int(z["format_version"]) != FORMAT_VERSION:
                    raise CheckpointError(f"snapshot {index} has unsupported format")
                item = {k: z[k] for k in z.files}
        return arrays_to_state(scene, item)

    def latest_at_or_before(self, index):
        cands = [i for i in self.snapshots if i <= index]
        if not cands:
            raise CheckpointError(f"no snapshot at or before {index}")
        return max(cands)

    def clear(self):
        if self.directory is not None:
            for p in self.snapshots.values():
                try:
                    os.remove(p)
                except OSError:
                    pass
        self.snapshots.clear()


def checkpoint_save(store, index, state, final=False):
    store.save(index, state, final)


def checkpoint_restore(store, index, scene):
    return store.restore(index, scene)
