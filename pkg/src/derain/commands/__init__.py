from typing import Dict, Type

from derain.commands.ablate import Ablate
from derain.commands.analyze_blocks import AnalyzeBlocks
from derain.commands.command import Command
from derain.commands.derain import Derain
from derain.commands.evaluate import Evaluate
from derain.commands.gen_data import GenData
from derain.commands.invert import Invert
from derain.commands.probe_prompts import ProbePrompts
from derain.commands.sweep_inversion import SweepInversion
from derain.commands.train_toy import TrainToy
from derain.config import ConfigError

builtins: Dict[str, Type[Command]] = {
    "gen-data": GenData,
    "train-toy": TrainToy,
    "invert": Invert,
    "derain": Derain,
    "analyze-blocks": AnalyzeBlocks,
    "sweep-inversion": SweepInversion,
    "probe-prompts": ProbePrompts,
    "evaluate": Evaluate,
    "ablate": Ablate,
}


def get_command_type(name: str) -> Type[Command]:
    if name in builtins:
        return builtins[name]
    raise ConfigError(f"Command {name} not defined.")


def create_command(name: str, **kwargs) -> Command:
    return get_command_type(name)(**kwargs)
