from derain.commands.command import HELDOUT_SEED_OFFSET, ModelCommand, scenes
from derain.config import ConfigError
from derain.pipeline import ablate


class Ablate(ModelCommand):
    """Ablation table over inversion method, prompt mode, switching and block sets."""

    def run(self):
        model = self.load_model()
        s = self.schedule()
        bundles = [
            b
            for b in scenes(self.config, HELDOUT_SEED_OFFSET, model.config.video_shape)
            if b.rain_mask.any()
        ]
        if not bundles:
            raise ConfigError("ablation needs at least one rainy scene, raise --num-videos")
        table = ablate(
            model, bundles, s, self.settings(model), model.corpus, lambda_plain=self.config.lambda_
        )
        self.save_text("ablation.csv", table.to_csv())
        self.save_text("ablation.json", table.to_json() + "\n")
