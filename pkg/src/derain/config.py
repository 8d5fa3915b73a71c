import argparse
import copy
import json
import logging
import os
import os.path
from typing import Dict, Iterable, List, Optional, Set

import tomli
from jsonschema import ValidationError, validate

from derain.errors import DerainError
from derain.schema import cmdline_friendly, get_python_type, run, schema

PRESET_PATH = os.path.join(os.path.dirname(__file__), "presets", "derain.toml")


class ConfigError(DerainError):
    pass


class Config:
    """Layered run configuration.

    Schema defaults < repository preset < user file < --config file < flags.
    """

    def __init__(self, command_names: Iterable[str], argv: Optional[List[str]] = None):
        self.config_dict: Dict = dict({"run": dict(), "commands": dict()})
        self.explicit: Set[str] = set()
        self.flags: Dict = dict()
        self.command_names = list(command_names)
        self._update_with_config_files()
        self._update_with_arguments(argv)
        self._update_with_defaults()
        try:
            validate(instance=self.config_dict, schema=schema)
        except ValidationError as e:
            raise ConfigError(f"invalid configuration: {e.message}")

    def _merge_file(self, path: str, explicit: bool = True):
        new_config = read_config_from_path(path)
        if new_config:
            if explicit:
                self.explicit |= set(new_config.get("run", {}))
            self.config_dict = merge_configs(new_config, self.config_dict)

    def _update_with_config_files(self):
        self._merge_file(PRESET_PATH, explicit=False)
        self._merge_file(get_user_config_path())

    def _update_with_arguments(self, argv):
        parser = argparse.ArgumentParser(
            prog="derain",
            description="Zero-shot video deraining with a toy joint-attention diffusion model.",
        )
        parser.add_argument(
            "command",
            metavar="<command>",
            choices=self.command_names,
            help=f"one of {', '.join(self.command_names)}",
        )
        parser.add_argument(
            "target",
            metavar="<manifest>",
            nargs="?",
            default=None,
            help="manifest to replay (replay only)",
        )
        parser.add_argument(
            "--config",
            metavar="<file>",
            default=None,
            help="JSON or TOML run configuration; flags override it",
        )
        parser.add_argument(
            "--no-attn-switch",
            dest="attn_switch",
            action="store_const",
            const=False,
            default=None,
            help="disable attention switching",
        )
        for prop_name, prop_details in run["properties"].items():
            if not cmdline_friendly(prop_details) or prop_name == "attn_switch":
                continue
            flag = prop_name.replace("_", "-")
            kwargs = dict(
                dest=prop_name,
                metavar=f"<{flag}>",
                type=get_python_type(prop_details),
                default=None,
                help=f"({prop_details.get('type', 'list or keyword')}) "
                f"{prop_details.get('description', '')}",
            )
            if prop_details.get("type") == "boolean":
                kwargs.update(nargs="?", const=True)
            parser.add_argument(f"--{flag}", **kwargs)
        parser.add_argument(
            "--attn-switch",
            dest="attn_switch",
            nargs="?",
            const=True,
            type=get_python_type(run["properties"]["attn_switch"]),
            help="(boolean) enable attention switching",
        )
        args = parser.parse_args(argv)
        self.command = args.command
        self.target = args.target
        if args.config is not None:
            if not os.path.exists(args.config):
                raise ConfigError(f"config file {args.config} does not exist")
            self._merge_file(args.config)
        for prop_name in run["properties"]:
            arg = getattr(args, prop_name, None)
            if arg is not None:
                self.config_dict["run"][prop_name] = arg
                self.flags[prop_name] = arg
                self.explicit.add(prop_name)

    def _update_with_defaults(self):
        run_config = self.config_dict["run"]
        for prop_name, prop_details in run["properties"].items():
            if prop_name not in run_config:
                run_config[prop_name] = copy.deepcopy(prop_details.get("default", None))
        # an explicit --lambda also drives the switching scale unless that is set too
        if "lambda" in self.explicit and "lambda_switch" not in self.explicit:
            run_config["lambda_switch"] = run_config["lambda"]
        if "DERAIN_RUN_DIR" in os.environ:
            run_config["run_dir"] = os.environ["DERAIN_RUN_DIR"]
        for key in [k for k, v in run_config.items() if v is None]:
            run_config.pop(key)

    def get_run_config(self, command: Optional[str] = None) -> "RunConfig":
        command = command or self.command
        values = merge_configs(
            copy.deepcopy(self.config_dict["commands"].get(command, {})),
            copy.deepcopy(self.config_dict["run"]),
        )
        # flags beat per-command file settings
        values.update(copy.deepcopy(self.flags))
        return RunConfig(command, values)


class RunConfig:
    def __init__(self, command: str, values: Dict):
        self.command = command
        self.values = values
        check_run_config(values)

    def __getattr__(self, name):
        values = self.__dict__.get("values", {})
        key = name.rstrip("_")
        if key not in values:
            if key in run["properties"]:
                return None
            raise AttributeError(name)
        return values[key]

    @property
    def effective_lambda(self) -> float:
        return self.lambda_switch if self.attn_switch else self.lambda_

    def to_dict(self) -> Dict:
        return {"command": self.command, "run": copy.deepcopy(self.values)}

    @classmethod
    def from_dict(cls, d: Dict) -> "RunConfig":
        values = {
            name: copy.deepcopy(details.get("default"))
            for name, details in run["properties"].items()
            if details.get("default") is not None
        }
        values.update(d["run"])
        try:
            validate(instance={"run": values}, schema=schema)
        except ValidationError as e:
            raise ConfigError(f"invalid configuration: {e.message}")
        return cls(d["command"], values)


def check_run_config(values: Dict):
    steps = values.get("steps", 100)
    if not 0 <= values.get("t_skip", 0) <= steps:
        raise ConfigError(f"t_skip {values.get('t_skip')} outside [0, {steps}]")
    for skip in values.get("t_skip_values") or []:
        if not 0 <= skip < steps:
            raise ConfigError(f"t_skip value {skip} outside [0, {steps})")
    if not 0 < values.get("beta_start", 1e-4) <= values.get("beta_end", 0.02) < 1:
        raise ConfigError("need 0 < beta_start <= beta_end < 1")
    if not 0 <= values.get("p_drop", 0.1) <= 1:
        raise ConfigError(f"p_drop {values.get('p_drop')} outside [0, 1]")
    if values.get("dim", 64) % values.get("heads", 4):
        raise ConfigError("dim must be divisible by heads")
    patch = values.get("patch_size", 4)
    if values.get("height", 16) % patch or values.get("width", 16) % patch:
        raise ConfigError("frame size must be divisible by patch_size")
    num_blocks = values.get("num_blocks", 8)
    blocks = values.get("blocks", "auto")
    initial = values.get("blocks_initial", "auto")
    for name, block_list in (("blocks", blocks), ("blocks_initial", initial)):
        if isinstance(block_list, list) and any(not 0 <= b < num_blocks for b in block_list):
            raise ConfigError(f"{name} {block_list} outside [0, {num_blocks})")
    if isinstance(blocks, list) and isinstance(initial, list) and not set(initial) <= set(blocks):
        raise ConfigError(f"blocks_initial {initial} not contained in blocks {blocks}")


def merge_configs(source, destination):
    for key, value in source.items():
        if isinstance(value, dict):
            node = destination.setdefault(key, {})
            merge_configs(value, node)
        else:
            destination[key] = value

    return destination


def read_config_from_path(path: str):
    if not os.path.exists(path):
        return None
    try:
        file = open(path, "rb")
    except OSError:
        logging.error(f"Failed to open file {path}")
        return None
    with file:
        try:
            if path.endswith(".json"):
                config = json.load(file)
            else:
                config = tomli.load(file)
        except (tomli.TOMLDecodeError, json.JSONDecodeError) as e:
            raise ConfigError(f"Failed to parse config file {path}: {e}")
    logging.info(f"Loaded config file {path}")
    return config


def get_user_config_path():
    if "XDG_CONFIG_HOME" in os.environ:
        return os.path.expandvars("$XDG_CONFIG_HOME/derain/derain.toml")
    else:
        return os.path.expandvars("$HOME/.config/derain/derain.toml")
