import json

import pytest
import torch

from derain.inversion import InversionError
from derain.pipeline import (
    DerainSettings,
    ablate,
    ablation_variants,
    derain,
    make_control,
)

SETTINGS = DerainSettings(lambda_=5.0, t_skip=4)


def test_output_is_a_video_in_pixel_range(micro_model, light_scene, schedule):
    result = derain(light_scene.rainy, micro_model, schedule, SETTINGS, with_reconstruction=True)
    assert result.output.shape == light_scene.rainy.shape
    assert result.output.min() >= 0 and result.output.max() <= 1
    assert result.reconstruction is not None and result.record is not None


def test_zero_scale_output_equals_reconstruction(micro_model, light_scene, schedule):
    settings = DerainSettings(lambda_=0.0, t_skip=4)
    result = derain(light_scene.rainy, micro_model, schedule, settings, with_reconstruction=True)
    assert torch.equal(result.output, result.reconstruction)


def test_derain_is_deterministic(micro_model, light_scene, schedule):
    a = derain(light_scene.rainy, micro_model, schedule, SETTINGS).output
    b = derain(light_scene.rainy, micro_model, schedule, SETTINGS).output
    assert torch.equal(a, b)


@pytest.mark.parametrize("mode", ["simple", "contextual", "implicit"])
def test_prompt_modes_run(micro_model, light_scene, schedule, mode):
    settings = DerainSettings(lambda_=5.0, t_skip=4, prompt_mode=mode)
    out = derain(light_scene.rainy, micro_model, schedule, settings).output
    assert bool(torch.isfinite(out).all())


def test_mean_mode_uses_corpus(micro_model, light_scene, schedule):
    settings = DerainSettings(lambda_=5.0, t_skip=4, prompt_mode="mean")
    out = derain(light_scene.rainy, micro_model, schedule, settings, ["scene light rain"]).output
    assert out.shape == light_scene.rainy.shape


def test_ddim_inversion_variant(micro_model, light_scene, schedule):
    settings = DerainSettings(lambda_=5.0, t_skip=7, inversion="ddim")
    result = derain(light_scene.rainy, micro_model, schedule, settings)
    assert result.record is None and result.output.shape == light_scene.rainy.shape


def test_sdedit_cannot_derain(micro_model, light_scene, schedule):
    with pytest.raises(InversionError):
        derain(light_scene.rainy, micro_model, schedule, DerainSettings(inversion="sdedit", t_skip=4))


def test_control_follows_settings(micro_model):
    assert make_control(micro_model, DerainSettings(attn_switch=False)) is None
    control = make_control(micro_model, DerainSettings(blocks=(1,), blocks_initial=()))
    assert control.block_set == {1} and control.initial_set == frozenset()


def test_ablation_variants(micro_model):
    variants = ablation_variants(micro_model, SETTINGS, 10, lambda_plain=2.0)
    groups = [(g, v) for g, v, _ in variants]
    assert ("inversion", "ddim") in groups and ("blocks", "later") in groups
    assert len(groups) == 2 + 4 + 2 + 4
    settings = dict(((g, v), s) for g, v, s in variants)
    assert settings[("inversion", "ddim")].t_skip == 7
    assert settings[("attn_switch", "off")].lambda_ == 2.0
    assert settings[("blocks", "none")].blocks == ()


def test_ablation_table(micro_model, light_scene, schedule):
    table = ablate(micro_model, [light_scene], schedule, SETTINGS, ["scene light rain"])
    assert len(table.rows) == 12
    assert table.row("prompt", "contextual").rain_residual >= 0
    assert table.to_csv().splitlines()[0] == "group,variant,rain_residual,psnr,warp_error"
    assert len(json.loads(table.to_json())) == 12
