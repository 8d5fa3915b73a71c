import pytest
import torch

from derain.metrics import warp_error
from derain.synthetic_rain import (
    INTENSITIES,
    RainSceneSpec,
    SceneError,
    composite,
    load_bundle,
    load_dataset,
    make_dataset,
    rain_layer_energy,
    render,
    save_bundle,
    spec_for_intensity,
)


def test_render_is_deterministic():
    spec = spec_for_intensity("heavy", 11)
    a, b = render(spec), render(spec)
    assert torch.equal(a.rainy, b.rainy) and torch.equal(a.rain_mask, b.rain_mask)


def test_shapes_and_ranges(light_scene):
    f, c, h, w = light_scene.clean.shape
    assert (f, c, h, w) == (2, 3, 8, 8)
    assert light_scene.rain_mask.shape == (f, 1, h, w)
    assert light_scene.flow.shape == (f - 1, 2, h, w)
    assert light_scene.clean.min() >= 0 and light_scene.rainy.max() <= 1


def test_rain_only_changes_masked_pixels(light_scene):
    changed = (light_scene.rainy != light_scene.clean).any(dim=1, keepdim=True)
    assert bool((changed <= (light_scene.rain_mask > 0)).all())
    assert bool(light_scene.rain_mask.any())


def test_clean_scene_has_no_rain():
    bundle = render(spec_for_intensity("none", 4))
    assert torch.equal(bundle.rainy, bundle.clean)
    assert not bool(bundle.rain_mask.any())
    assert bundle.caption == "scene"


def test_ground_truth_flow_aligns_clean_frames():
    for seed in range(5):
        bundle = render(spec_for_intensity("light", seed))
        assert warp_error(bundle.clean, bundle.flow) < 1e-5


def test_composite_formula():
    clean = torch.full((1, 3, 2, 2), 0.2)
    mask = torch.tensor([[1.0, 0.0], [0.0, 0.0]]).reshape(1, 1, 2, 2)
    out = composite(clean, mask, 0.5)
    assert torch.allclose(out[0, :, 0, 0], torch.full((3,), 0.2 * 0.5 + 0.5 * 0.95))
    assert torch.equal(out[0, :, 1, 1], clean[0, :, 1, 1])


def test_heavier_rain_has_more_energy():
    light = [rain_layer_energy(render(spec_for_intensity("light", s))) for s in range(4)]
    heavy = [rain_layer_energy(render(spec_for_intensity("heavy", s))) for s in range(4)]
    assert sum(heavy) > sum(light)


@pytest.mark.parametrize(
    "changes",
    [
        dict(frames=1),
        dict(streak_opacity=1.5),
        dict(intensity="drizzle"),
        dict(intensity="none", streak_count=3),
        dict(intensity="light", streak_count=20),
        dict(intensity="heavy", streak_count=2),
        dict(weather="hail"),
        dict(background="noise"),
    ],
)
def test_invalid_specs_rejected(changes):
    with pytest.raises(SceneError):
        render(RainSceneSpec(**changes))


def test_snow_scene():
    spec = spec_for_intensity("light", 2, weather="snow")
    bundle = render(spec)
    assert bundle.caption == "scene snow"
    assert spec.step[1] == 1
    assert bool(bundle.rain_mask.any())


def test_dataset_cycles_intensity_classes():
    bundles = make_dataset(6, 0)
    assert [b.spec.intensity for b in bundles] == list(INTENSITIES) * 2
    with pytest.raises(SceneError):
        make_dataset(0, 0)


def test_bundle_persistence(tmp_path, light_scene):
    save_bundle(light_scene, str(tmp_path / "scene_000.vdt"))
    loaded = load_bundle(str(tmp_path / "scene_000.vdt"))
    assert torch.equal(loaded.rainy, light_scene.rainy)
    assert torch.equal(loaded.flow, light_scene.flow)
    assert loaded.caption == light_scene.caption
    assert loaded.spec == light_scene.spec
    assert len(load_dataset(str(tmp_path))) == 1


def test_missing_dataset_rejected(tmp_path):
    with pytest.raises(SceneError):
        load_dataset(str(tmp_path / "nothing"))
    with pytest.raises(SceneError):
        load_dataset(str(tmp_path))
