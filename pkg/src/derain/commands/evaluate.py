import logging

from derain.commands.command import Command, read_optional, read_tensor, require_path
from derain.config import ConfigError
from derain.metrics import evaluate


class Evaluate(Command):
    """Score --input against --clean, --flow and --mask.

    Any of the three may be a scene bundle; a bundle given as --clean also
    yields the scores of its rainy video, the baseline the output should beat.
    """

    @classmethod
    def check(cls, run_config):
        super().check(run_config)
        require_path(run_config, "input")
        require_path(run_config, "clean")

    def run(self):
        output = read_tensor(self.config.input)
        clean = read_tensor(self.config.clean, "clean")
        flow = read_optional(self.config.flow, self.config.clean, "flow")
        mask = read_optional(self.config.mask, self.config.clean, "rain_mask")
        if flow is None or mask is None:
            raise ConfigError("evaluate needs a flow and a rain mask (--flow, --mask or a bundle)")
        rows = {"output": evaluate(output, clean, flow, mask)}
        rainy = read_optional(None, self.config.clean, "rainy")
        if rainy is not None:
            rows["rainy"] = evaluate(rainy, clean, flow, mask)
        for name, report in rows.items():
            self.save_text(f"metrics_{name}.json", report.to_json() + "\n")
            self.save_text(f"metrics_{name}.csv", report.to_csv())
            logging.info(
                f"{name}: psnr {report.psnr_vs_clean:.2f}, warp {report.warp_error:.5f}, "
                f"residual {report.rain_residual:.5f}"
            )
