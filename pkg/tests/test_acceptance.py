"""Quantitative checks on a trained toy model; run with `pytest -m slow`."""
import statistics

import pytest
import torch

from derain.analysis import inversion_sweep, prompt_probe
from derain.denoiser import ToyDenoiser, to_latent
from derain.guidance import GuidanceSpec, build_negative_condition
from derain.inversion import ddpm_invert, reconstruct
from derain.metrics import evaluate, psnr
from derain.pipeline import DerainSettings, derain
from derain.schedule import build_schedule
from derain.synthetic_rain import make_dataset
from derain.training import caption_corpus, heldout_loss, train_toy

pytestmark = pytest.mark.slow

TRAIN_STEPS = 20000
ENERGY_SEEDS = range(16)


@pytest.fixture(scope="session")
def trained():
    s = build_schedule(100)
    dataset = make_dataset(48, 0)
    result = train_toy(dataset, steps=TRAIN_STEPS, seed=0, s=s)
    assert result.final_ema < result.start_ema
    return result.model, s, caption_corpus(dataset)


@pytest.fixture(scope="session")
def heldout():
    return [b for b in make_dataset(15, 1000) if b.rain_mask.any()][:10]


@pytest.fixture(scope="session")
def bringup(request):
    """Measured quantities, kept in the pytest cache (`pytest --cache-show='derain/*'`)."""
    record = {"train_steps": TRAIN_STEPS}
    yield record
    request.config.cache.set("derain/bringup", record)


def test_ddpm_inversion_round_trip(trained):
    model, s, _ = trained
    null = model.null_condition()
    generator = torch.Generator().manual_seed(0)
    for _ in range(10):
        x0 = torch.rand(model.config.video_shape, generator=generator) * 2 - 1
        out = reconstruct(ddpm_invert(x0, null, model, s, seed=0), null, model, s)
        assert (out - x0).abs().max().item() < 1e-4
        assert psnr(out, x0, peak=2.0) > 60.0


def test_inversion_method_ordering(trained, heldout):
    model, s, _ = trained
    skips = [0, 25, 50]
    table = inversion_sweep(model, [to_latent(b.rainy) for b in heldout[:5]], skips, s)
    for skip in skips:
        ddpm, ddim, sdedit = (table.psnr[(m, skip)] for m in ("ddpm", "ddim", "sdedit"))
        assert ddpm >= ddim >= sdedit
    finite = [v for v in table.series("ddpm") if v != float("inf")]
    assert not finite or max(finite) - min(finite) < 0.5


def test_deviation_grows_with_scale(trained, heldout):
    model, s, _ = trained
    x0 = to_latent(heldout[0].rainy)
    null = model.null_condition()
    negative = build_negative_condition("contextual", "light rain", model)
    record = ddpm_invert(x0, null, model, s, seed=0)
    pure = reconstruct(record, null, model, s)
    deviations = []
    for lambda_ in (0.0, 5.0, 15.0, 25.0):
        guidance = GuidanceSpec(lambda_, 40, negative, null, s.num_steps)
        out = reconstruct(record, null, model, s, guidance)
        deviations.append((out - pure).abs().mean().item())
    assert deviations[0] == 0.0
    assert deviations == sorted(deviations)


def test_end_to_end_deraining(trained, heldout, bringup):
    model, s, corpus = trained
    settings = DerainSettings(lambda_=25.0, t_skip=40)
    before, after = [], []
    for bundle in heldout:
        output = derain(bundle.rainy, model, s, settings, corpus).output
        before.append(evaluate(bundle.rainy, bundle.clean, bundle.flow, bundle.rain_mask))
        after.append(evaluate(output, bundle.clean, bundle.flow, bundle.rain_mask))
    mean = statistics.fmean
    bringup["end_to_end"] = {
        field: [mean(getattr(r, field) for r in before), mean(getattr(r, field) for r in after)]
        for field in ("rain_residual", "psnr_vs_clean", "warp_error")
    }
    assert mean(r.rain_residual for r in after) <= 0.5 * mean(r.rain_residual for r in before)
    assert mean(r.psnr_vs_clean for r in after) >= mean(r.psnr_vs_clean for r in before) + 1.0
    assert mean(r.warp_error for r in after) < mean(r.warp_error for r in before)


def test_prompt_mode_ordering(trained, heldout, bringup):
    model, s, corpus = trained
    residual = {}
    for mode in ("contextual", "mean", "simple", "implicit"):
        settings = DerainSettings(lambda_=25.0, t_skip=40, prompt_mode=mode)
        residual[mode] = statistics.fmean(
            evaluate(
                derain(b.rainy, model, s, settings, corpus).output, b.clean, b.flow, b.rain_mask
            ).rain_residual
            for b in heldout
        )
    bringup["prompt_mode_residual"] = residual
    assert residual["contextual"] <= residual["mean"]
    # context-free text embeddings make mean and simple equal up to rounding
    assert residual["mean"] <= residual["simple"] * (1 + 1e-3)
    assert residual["simple"] <= residual["implicit"]


def test_training_beats_untrained_on_heldout(trained, heldout, bringup):
    model, s, _ = trained
    untrained = ToyDenoiser(model.config, seed=1).eval()
    loss = heldout_loss(model, heldout, s, seed=0)
    baseline = heldout_loss(untrained, heldout, s, seed=0)
    bringup["heldout_loss"] = {"trained": loss, "untrained": baseline}
    assert loss * 2 <= baseline


def test_rain_prompts_add_rain_energy(trained, bringup):
    model, s, _ = trained
    scene = prompt_probe(model, model.condition("scene"), ENERGY_SEEDS, s)
    energies = bringup["rain_energy"] = {"scene": scene.rain_energy}
    for prompt in ("scene rain", "scene light rain"):
        report = prompt_probe(model, model.condition(prompt), ENERGY_SEEDS, s)
        energies[prompt] = report.rain_energy
        assert report.rain_energy > scene.rain_energy


def _welch_t(a, b):
    spread = statistics.variance(a) / len(a) + statistics.variance(b) / len(b)
    return (statistics.fmean(a) - statistics.fmean(b)) / max(spread, 1e-24) ** 0.5


@pytest.mark.xfail(
    strict=False,
    reason="caption dropout spans every caption, so the null prompt may keep some rain",
)
def test_null_prompt_matches_plain_scene(trained, bringup):
    model, s, _ = trained
    null = prompt_probe(model, model.null_condition(), ENERGY_SEEDS, s)
    scene = prompt_probe(model, model.condition("scene"), ENERGY_SEEDS, s)
    t = _welch_t(null.per_seed_rain, scene.per_seed_rain)
    bringup["null_vs_scene_t"] = t
    assert abs(t) < 2.0


def test_switching_residual_does_not_grow_with_scale(trained, heldout, bringup):
    model, s, corpus = trained
    residual = {}
    for lambda_ in (15.0, 25.0):
        settings = DerainSettings(lambda_=lambda_, t_skip=40, attn_switch=True)
        residual[lambda_] = statistics.fmean(
            evaluate(
                derain(b.rainy, model, s, settings, corpus).output, b.clean, b.flow, b.rain_mask
            ).rain_residual
            for b in heldout
        )
    bringup["switching_residual"] = {str(k): v for k, v in residual.items()}
    assert residual[25.0] <= residual[15.0]
