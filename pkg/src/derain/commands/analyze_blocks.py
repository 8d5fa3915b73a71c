import logging

import torch

from derain.attention_control import attention_maps, block_impact_study
from derain.commands.command import ModelCommand
from derain.graphics.bar_graph import BarGraph
from derain.graphics.heatmap import draw_attention_maps
from derain.schedule import forward_noise


class AnalyzeBlocks(ModelCommand):
    def run(self):
        model = self.load_model()
        s = self.schedule()
        prompts = [model.condition(p) for p in self.config.prompts]
        selection = block_impact_study(model, prompts, self.config.seeds, s)
        self.save_text("block_impact.csv", selection.to_csv())
        self.save_json("selected_blocks.json", sorted(selection.selected))
        self.register(
            BarGraph().draw(
                selection.impact_scores, self.path("block_impact.png"), selection.selected
            )
        )
        if self.config.attn_maps:
            self.draw_maps(model, s, prompts[-1])

    def draw_maps(self, model, s, cond):
        t = s.num_steps // 2
        generator = torch.Generator().manual_seed(self.config.seed)
        x0 = torch.zeros(model.config.video_shape)
        noise = torch.randn(model.config.video_shape, generator=generator)
        maps = attention_maps(model, forward_noise(x0, t, noise, s), t, cond)
        self.save_tensors("attention_maps.vdt", {"maps": maps})
        path = draw_attention_maps(
            maps, self.path("attention_maps.png"), f"'{cond.prompt()}' at step {t}"
        )
        self.register(path)
        logging.info(f"Attention maps of {maps.shape[0]} blocks at step {t}")
