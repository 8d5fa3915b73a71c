import logging

from derain.commands.command import HELDOUT_SEED_OFFSET, Command, scenes
from derain.denoiser import DenoiserConfig
from derain.graphics.line_graph import LineGraph
from derain.synthetic_rain import make_dataset
from derain.training import heldout_loss, train_toy


class TrainToy(Command):
    def run(self):
        config = DenoiserConfig(
            num_blocks=self.config.num_blocks,
            dim=self.config.dim,
            heads=self.config.heads,
            text_len=self.config.text_len,
            patch_size=self.config.patch_size,
            frames=self.config.frames,
            channels=self.config.channels,
            height=self.config.height,
            width=self.config.width,
        )
        s = self.schedule()
        checkpoint = self.path("model.vdt")
        result = train_toy(
            scenes(self.config),
            steps=self.config.train_steps,
            seed=self.config.seed,
            s=s,
            config=config,
            batch_size=self.config.batch_size,
            learning_rate=self.config.learning_rate,
            p_drop=self.config.p_drop,
            checkpoint_path=checkpoint,
        )
        self.register(checkpoint)
        lines = ["step,loss,ema"]
        lines += [
            f"{step},{loss},{ema}"
            for step, (loss, ema) in enumerate(zip(result.losses, result.ema_losses))
        ]
        self.save_text("losses.csv", "\n".join(lines) + "\n")
        if result.losses:
            steps = list(range(len(result.losses)))
            path = LineGraph("Training loss", "step", "MSE").draw(
                steps, {"ema": result.ema_losses}, self.path("losses.png")
            )
            self.register(path)
        heldout = make_dataset(
            self.config.num_videos,
            self.config.seed + HELDOUT_SEED_OFFSET,
            config.frames,
            config.height,
            config.width,
        )
        loss = heldout_loss(result.model, heldout, s, self.config.seed)
        self.manifest.data["heldout_loss"] = loss
        logging.info(f"Held-out loss {loss:.5f}")
