import logging
from derain.commands.command import ModelCommand, read_optional, read_tensor, require_path
from derain.metrics import MetricsReport, evaluate
from derain.pipeline import derain


class Derain(ModelCommand):
    """Run the deraining pipeline on --input.

    When the input is a scene bundle, or --clean, --flow and --mask are given,
    the output and the rainy input are both scored against the ground truth.
    """

    @classmethod
    def check(cls, run_config):
        super().check(run_config)
        require_path(run_config, "input")
        for key in ("clean", "flow", "mask"):
            if getattr(run_config, key) is not None:
                require_path(run_config, key)

    def run(self):
        model = self.load_model()
        s = self.schedule()
        rainy = read_tensor(self.config.input, "rainy")
        settings = self.settings(model)
        result = derain(rainy, model, s, settings, model.corpus, with_reconstruction=True)
        self.save_video("derained", result.output)
        if result.reconstruction is not None:
            self.save_video("reconstruction", result.reconstruction)
        self.manifest.data["settings"] = {
            "lambda": settings.lambda_,
            "blocks": settings.blocks,
            "blocks_initial": settings.blocks_initial,
        }
        clean = read_optional(self.config.clean, self.config.input, "clean")
        flow = read_optional(self.config.flow, self.config.input, "flow")
        mask = read_optional(self.config.mask, self.config.input, "rain_mask")
        if clean is None or flow is None or mask is None:
            logging.info("No ground truth for the input, skipping metrics")
            return
        self.write_reports(evaluate(result.output, clean, flow, mask), "derained")
        self.write_reports(evaluate(rainy, clean, flow, mask), "rainy")

    def write_reports(self, report: MetricsReport, name: str) -> str:
        self.save_text(f"metrics_{name}.json", report.to_json() + "\n")
        logging.info(
            f"{name}: psnr {report.psnr_vs_clean:.2f}, warp {report.warp_error:.5f}, "
            f"residual {report.rain_residual:.5f}"
        )
        return self.save_text(f"metrics_{name}.csv", report.to_csv())
