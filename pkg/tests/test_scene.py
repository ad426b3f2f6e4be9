import numpy as np
import pytest
import yaml

from fluidopt.errors import SceneError
from fluidopt.scene import build_scene, load_scene, load_scene_file
from fluidopt.scenes import TOYS, toy_problem


def test_empty_scene_has_no_particles():
    s = build_scene(None, {})
    assert s.scene.n_particles == 0
    assert s.x.shape == (0, 2)


def test_unit_box_particle_count_and_mass():
    spec = {"config": {"dim": 3, "grid_resolution": 8},
            "materials": {"m": {"kind": "Elastic", "mu": 1.0, "lam": 1.0, "rho": 2.5}},
            "bodies": [{"material": "m", "shape": {"type": "box", "half_extents": [0.5, 0.5, 0.5]},
                        "position": [0.5, 0.5, 0.5], "particles_per_cell": 8}]}
    s = build_scene(None, spec)
    assert s.scene.n_particles == 4096
    assert s.total_mass() == pytest.approx(2.5 * 1.0, rel=1e-12)


def test_lattice_is_deterministic_and_inside():
    spec = TOYS["toy_gathering"]()
    a = build_scene(None, spec)
    b = build_scene(None, spec)
    assert np.array_equal(a.x, b.x)
    assert np.all(a.x > 0) and np.all(a.x < 1)


@pytest.mark.parametrize("bad", [
    {"config": {"dim": 4}},
    {"config": {"grid_resolution": 16, "bogus": 1}},
    {"bodies": [{"material": "nope", "shape": {"type": "sphere", "radius": 0.1}, "position": [0.5, 0.5]}]},
    {"bodies": [{"material": "water", "shape": {"type": "sphere", "radius": 0.1}, "position": [0.5, 0.5],
                 "particles_per_cell": 3}]},
    {"bodies": [{"material": "water", "shape": {"type": "sphere", "radius": 0.3}, "position": [0.9, 0.5]}]},
    {"config": {"contact_model": "squishy"}},
])
def test_invalid_scenes_raise(bad):
    with pytest.raises(SceneError):
        build_scene(None, bad)


def test_yaml_round_trip(tmp_path):
    spec = TOYS["toy_pouring"]()
    p = tmp_path / "s.yaml"
    p.write_text(yaml.safe_dump(spec))
    state, loaded = load_scene(str(p))
    assert np.array_equal(state.x, build_scene(None, spec).x)


def test_yaml_error_reports_line(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("config:\n  dim: 2\n  gravity: [0, -1\n")
    with pytest.raises(SceneError) as err:
        load_scene_file(str(p))
    assert err.value.line is not None


@pytest.mark.parametrize("name", sorted(TOYS))
def test_toys_build(name):
    state, loss, init, spec = toy_problem(name, seed=3)
    assert init.horizon == spec["optimizer"]["horizon"]
    assert loss.terms
