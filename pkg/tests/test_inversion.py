import pytest
import torch

from derain.guidance import GuidanceSpec, build_negative_condition
from derain.inversion import (
    InversionError,
    ddim_invert,
    ddpm_invert,
    invert_and_reconstruct,
    load_record,
    reconstruct,
    reconstruct_ddim,
    save_record,
)
from derain.metrics import psnr
from derain.schedule import build_schedule


def test_record_layout(micro_model, latent, schedule):
    record = ddpm_invert(latent, micro_model.null_condition(), micro_model, schedule, seed=0)
    T = schedule.num_steps
    assert record.noise_maps.shape == (T,) + tuple(latent.shape)
    assert torch.count_nonzero(record.noise_maps[0]) == 0
    assert record.latents.shape == (T + 1,) + tuple(latent.shape)
    assert record.top_step == T - 1
    assert record.schedule_id == schedule.schedule_id


def test_ddpm_reconstruction_is_exact(micro_model, latent, schedule):
    null = micro_model.null_condition()
    record = ddpm_invert(latent, null, micro_model, schedule, seed=0)
    out = reconstruct(record, null, micro_model, schedule)
    assert (out - latent).abs().max().item() < 1e-4


def test_replay_matches_stored_trajectory(micro_model, latent, schedule):
    cond = micro_model.condition("scene rain")
    record = ddpm_invert(latent, cond, micro_model, schedule, seed=1)
    assert torch.equal(reconstruct(record, cond, micro_model, schedule), record.latents[0])


@pytest.mark.parametrize("skip", [0, 3, 9])
def test_ddpm_reconstruction_exact_for_every_skip(micro_model, latent, schedule, skip):
    null = micro_model.null_condition()
    out = invert_and_reconstruct("ddpm", latent, null, micro_model, schedule, skip, seed=2)
    assert (out - latent).abs().max().item() < 1e-4


def test_inversion_is_deterministic_under_seed(micro_model, latent, schedule):
    null = micro_model.null_condition()
    a = ddpm_invert(latent, null, micro_model, schedule, seed=3)
    b = ddpm_invert(latent, null, micro_model, schedule, seed=3)
    c = ddpm_invert(latent, null, micro_model, schedule, seed=4)
    assert torch.equal(a.noise_maps, b.noise_maps) and torch.equal(a.x_T, b.x_T)
    assert not torch.equal(a.x_T, c.x_T)


def test_schedule_mismatch_rejected(micro_model, latent, schedule):
    null = micro_model.null_condition()
    record = ddpm_invert(latent, null, micro_model, schedule, seed=0)
    with pytest.raises(InversionError):
        reconstruct(record, null, micro_model, build_schedule(10, kind="cosine"))


def test_empty_video_rejected(micro_model, schedule):
    with pytest.raises(InversionError):
        ddpm_invert(torch.zeros(0, 3, 8, 8), micro_model.null_condition(), micro_model, schedule, 0)


def test_skip_outside_range_rejected(micro_model, latent, schedule):
    with pytest.raises(InversionError):
        ddpm_invert(latent, micro_model.null_condition(), micro_model, schedule, 0, skip=10)


def test_unknown_method_rejected(micro_model, latent, schedule):
    with pytest.raises(InversionError):
        invert_and_reconstruct("ode", latent, micro_model.null_condition(), micro_model, schedule)


def test_ddim_trajectory_and_reconstruction(micro_model, latent, schedule):
    null = micro_model.null_condition()
    trajectory = ddim_invert(latent, null, micro_model, schedule)
    assert len(trajectory) == schedule.num_steps + 1
    out = reconstruct_ddim(trajectory[-1], schedule.num_steps - 1, null, micro_model, schedule)
    assert out.shape == latent.shape
    assert bool(torch.isfinite(out).all())


def test_ddpm_beats_sdedit(micro_model, latent, schedule):
    null = micro_model.null_condition()
    ddpm = invert_and_reconstruct("ddpm", latent, null, micro_model, schedule)
    sdedit = invert_and_reconstruct("sdedit", latent, null, micro_model, schedule)
    assert psnr(ddpm, latent, peak=2.0) > psnr(sdedit, latent, peak=2.0)


def test_record_persists_bit_exactly(tmp_path, micro_model, latent, schedule):
    cond = micro_model.condition("light rain")
    record = ddpm_invert(latent, cond, micro_model, schedule, seed=0)
    path = str(tmp_path / "record.vdt")
    save_record(record, path)
    loaded = load_record(path)
    assert torch.equal(loaded.noise_maps, record.noise_maps)
    assert torch.equal(loaded.final_residual, record.final_residual)
    assert loaded.condition_used.same_as(cond)
    assert torch.equal(
        reconstruct(loaded, cond, micro_model, schedule),
        reconstruct(record, cond, micro_model, schedule),
    )


def test_different_seeds_change_noise_maps_not_reconstruction(micro_model, latent, schedule):
    null = micro_model.null_condition()
    a = ddpm_invert(latent, null, micro_model, schedule, seed=0, retain_latents=False)
    b = ddpm_invert(latent, null, micro_model, schedule, seed=1, retain_latents=False)
    assert not torch.equal(a.noise_maps, b.noise_maps)
    out_a = reconstruct(a, null, micro_model, schedule)
    out_b = reconstruct(b, null, micro_model, schedule)
    torch.testing.assert_close(out_a, out_b, rtol=0, atol=1e-4)
    torch.testing.assert_close(out_a, latent, rtol=0, atol=1e-4)


def test_guided_distance_grows_as_fewer_steps_are_skipped(micro_model, latent, schedule):
    null = micro_model.null_condition()
    negative = build_negative_condition("contextual", "light rain", micro_model)
    record = ddpm_invert(latent, null, micro_model, schedule, seed=0)
    pure = reconstruct(record, null, micro_model, schedule)
    distances = []
    for t_skip in (10, 8, 5, 2):
        guidance = GuidanceSpec(2.0, t_skip, negative, null, schedule.num_steps)
        out = reconstruct(record, null, micro_model, schedule, guidance)
        distances.append((out - pure).abs().mean().item())
    assert distances[0] == 0.0
    assert distances == sorted(distances)
