from typing import Dict, Iterable

from derain.commands import builtins
from derain.schema import cmdline_friendly, run


def generate_docs():
    command_list = _intercalate((f"`{c}`" for c in list(builtins) + ["replay"]), ", ")
    docs = f"""
# Configuration guide
Configuration is written in [TOML](https://toml.io/en/) or JSON. Values are layered, lowest first:

1. schema defaults (the table below),
2. the preset shipped with the package, `src/derain/presets/derain.toml`,
3. the user file `$XDG_CONFIG_HOME/derain/derain.toml` (or `$HOME/.config/derain/derain.toml` if the former is not defined),
4. a file passed with `--config <file>` (`.json` files are read as JSON, anything else as TOML),
5. the `commands.<command>` section for the running command, from any of those files,
6. command-line flags.

`DERAIN_RUN_DIR` overrides the `run_dir` read from files; a `--run-dir` flag still wins. Setting `lambda` explicitly (and not `lambda_switch`) uses that scale with attention switching too.

## Shared settings
Shared settings live in a table called `run`:
```toml
[run]
checkpoint = "runs/train-toy-base/model.vdt"
steps = 100
t_skip = 40
prompt_mode = "contextual"
concept = "light rain"
```

## Per-command settings
Settings under `commands.<command>` apply to one command only and override `run`:
```toml
[commands.analyze-blocks]
seeds = [0, 1, 2, 3, 4, 5, 6, 7]
attn_maps = true
```
The available commands are {command_list}. Run
```bash
derain --help
```
for the command-line flags.

The available configuration keys are:

{generate_table(run)}
"""
    with open("CONFIGURATION.md", "w") as file:
        file.write(docs)


def generate_table(table):
    run_table = " Key | Type | Available in command line | Default | Description \n ---|---|---|---|---\n"
    for prop_name, prop_details in table["properties"].items():
        run_table += f"`{prop_name}` | {generate_type_doc(prop_details)} | {'yes' if cmdline_friendly(prop_details) else 'no'} | `{prop_details.get('default', None)}` | {prop_details.get('description', '')}\n"
    return run_table


def generate_type_doc(type: Dict) -> str:
    if "enum" in type:
        return _intercalate(map(lambda a: f'`"{a}"`', type["enum"]), " *or* ")
    elif "type" in type:
        if type["type"] == "array":
            return f"array of {generate_type_doc(type['items'])}"
        return type["type"]
    elif "anyOf" in type:
        return _intercalate(
            map(lambda a: generate_type_doc(a), type["anyOf"]),
            " *or* ",
        )
    else:
        return "unknown"


def _intercalate(l: Iterable[str], sep: str):
    out = ""
    for i, val in enumerate(l):
        if i != 0:
            out += sep
        out += val
    return out
