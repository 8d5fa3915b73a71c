import logging

from derain.commands.command import ModelCommand, read_tensor, require_path
from derain.denoiser import from_latent, to_latent
from derain.inversion import (
    ddim_invert,
    ddpm_invert,
    reconstruct,
    reconstruct_ddim,
    save_record,
    sdedit_invert,
    sdedit_reconstruct,
)
from derain.metrics import json_number, psnr


class Invert(ModelCommand):
    """Invert one video and write the inversion plus its unguided reconstruction."""

    @classmethod
    def check(cls, run_config):
        super().check(run_config)
        require_path(run_config, "input")

    def run(self):
        model = self.load_model()
        s = self.schedule()
        video = read_tensor(self.config.input, "rainy")
        x0 = to_latent(video)
        cond = (
            model.condition(self.config.concept)
            if self.config.invert_with == "concept"
            else model.null_condition()
        )
        top = s.num_steps - 1
        match self.config.inversion:
            case "ddpm":
                record = ddpm_invert(x0, cond, model, s, self.config.seed)
                path = self.path("record.vdt")
                save_record(record, path)
                self.register(path)
                latent = reconstruct(record, cond, model, s)
            case "ddim":
                trajectory = ddim_invert(x0, cond, model, s)
                self.save_tensors("x_T.vdt", {"x_T": trajectory[-1]})
                latent = reconstruct_ddim(trajectory[-1], top, cond, model, s)
            case _:
                x_t = sdedit_invert(x0, top, s, self.config.seed)
                self.save_tensors("x_T.vdt", {"x_T": x_t})
                latent = sdedit_reconstruct(x_t, top, cond, model, s, self.config.seed)
        score = psnr(latent, x0, peak=2.0)
        self.save_video("reconstruction", from_latent(latent).clamp(0.0, 1.0))
        self.save_json(
            "inversion.json", {"method": self.config.inversion, "latent_psnr": json_number(score)}
        )
        logging.info(f"{self.config.inversion} inversion reconstructs at {score:.2f} dB")
