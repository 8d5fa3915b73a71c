from derain.analysis import inversion_sweep
from derain.commands.command import HELDOUT_SEED_OFFSET, ModelCommand, scenes
from derain.config import ConfigError
from derain.denoiser import to_latent
from derain.graphics.line_graph import LineGraph


class SweepInversion(ModelCommand):
    """Reconstruction PSNR of every inversion method across skip values."""

    def run(self):
        model = self.load_model()
        s = self.schedule()
        T = s.num_steps
        skips = self.config.t_skip_values or [0, T // 4, T // 2]
        if any(not 0 <= k < T for k in skips):
            raise ConfigError(f"skip values {skips} outside [0, {T})")
        bundles = scenes(self.config, HELDOUT_SEED_OFFSET, model.config.video_shape)
        videos = [to_latent(b.rainy) for b in bundles]
        table = inversion_sweep(model, videos, skips, s, seed=self.config.seed)
        self.save_text("inversion_sweep.csv", table.to_csv())
        path = LineGraph("Inversion reconstruction", "skipped steps", "PSNR (dB)").draw(
            skips,
            {method: table.series(method) for method in table.methods},
            self.path("inversion_sweep.png"),
        )
        self.register(path)
