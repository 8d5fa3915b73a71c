import logging
from dataclasses import asdict

from derain.analysis import prompt_probe
from derain.commands.command import ModelCommand


class ProbePrompts(ModelCommand):
    """Rain-band and background energy of samples generated from each prompt."""

    def run(self):
        model = self.load_model()
        s = self.schedule()
        reports = [
            prompt_probe(model, model.condition(prompt), self.config.seeds, s)
            for prompt in self.config.prompts
        ]
        lines = ["prompt,rain_energy,background_energy"]
        lines += [f"{r.prompt},{r.rain_energy},{r.background_energy}" for r in reports]
        self.save_text("probes.csv", "\n".join(lines) + "\n")
        self.save_json("probes.json", [asdict(r) for r in reports])
        logging.info(f"Probed {len(reports)} prompts over {len(self.config.seeds)} seeds")
