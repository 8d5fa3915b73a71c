import pytest
import torch

from derain.denoiser import DenoiserConfig, ToyDenoiser
from derain.schedule import build_schedule
from derain.synthetic_rain import make_dataset, render, spec_for_intensity

MICRO = DenoiserConfig(
    num_blocks=2, dim=8, heads=2, text_len=4, patch_size=4, frames=2, channels=3, height=8, width=8
)


@pytest.fixture(autouse=True)
def isolated_config(tmp_path, monkeypatch):
    monkeypatch.setenv("XDG_CONFIG_HOME", str(tmp_path / "xdg"))
    monkeypatch.delenv("DERAIN_RUN_DIR", raising=False)


@pytest.fixture
def micro_config():
    return MICRO


@pytest.fixture
def micro_model():
    return ToyDenoiser(MICRO, seed=0).eval()


@pytest.fixture
def wide_model():
    """Six blocks so the default block sets have later blocks outside B_initial."""
    config = DenoiserConfig(
        num_blocks=6, dim=8, heads=2, text_len=4, patch_size=4, frames=2, channels=3, height=8, width=8
    )
    return ToyDenoiser(config, seed=1).eval()


@pytest.fixture
def schedule():
    return build_schedule(10)


@pytest.fixture
def latent():
    generator = torch.Generator().manual_seed(7)
    return torch.rand(MICRO.video_shape, generator=generator) * 2 - 1


@pytest.fixture
def light_scene():
    return render(spec_for_intensity("light", 3, frames=2, height=8, width=8))


@pytest.fixture
def micro_dataset():
    return make_dataset(6, 0, frames=2, height=8, width=8)
