import logging
import os

from derain.commands.command import Command
from derain.synthetic_rain import make_dataset, rain_layer_energy, save_bundle
from derain.utils.images import write_frames


class GenData(Command):
    def run(self):
        bundles = make_dataset(
            self.config.num_videos,
            self.config.seed,
            self.config.frames,
            self.config.height,
            self.config.width,
        )
        index = []
        for i, bundle in enumerate(bundles):
            name = f"scene_{i:03d}"
            path = self.path(f"{name}.vdt")
            save_bundle(bundle, path)
            frames_dir = self.path("frames", name, "")
            outputs = [path]
            outputs += write_frames(bundle.clean, frames_dir, "clean", png=self.config.png)
            outputs += write_frames(bundle.rainy, frames_dir, "rainy", png=self.config.png)
            self.manifest.add_outputs(outputs)
            index.append(
                {
                    "file": os.path.basename(path),
                    "caption": bundle.caption,
                    "rain_energy": rain_layer_energy(bundle),
                }
            )
        self.save_json("dataset.json", index)
        logging.info(f"Wrote {len(bundles)} scenes to {self.run_dir}")
