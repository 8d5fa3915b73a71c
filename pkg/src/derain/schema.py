from typing import Dict, List, Optional, Type


def primitive(
    type: str = "string", description: Optional[str] = None, default=None
) -> Dict:
    obj = dict({"type": type})
    if description is not None:
        obj["description"] = description
    if default is not None:
        obj["default"] = default
    return obj


def cmdline_friendly(type: Dict) -> bool:
    if "type" in type:
        match type["type"]:
            case "string" | "boolean" | "integer" | "number":
                return True
            case "array":
                return type["items"].get("type") in ("string", "integer", "number")
    if "anyOf" in type:
        return all(cmdline_friendly(t) for t in type["anyOf"])
    return False


def _parse_list(item_type: Type):
    return lambda string: [item_type(v) for v in string.split(",") if v != ""]


def get_python_type(type: Dict) -> Type:
    if "type" in type:
        match type["type"]:
            case "string":
                return str
            case "boolean":
                return lambda string: string.lower() in ("1", "true", "yes", "on")
            case "integer":
                return int
            case "number":
                return float
            case "array":
                match type["items"]["type"]:
                    case "string":
                        return _parse_list(str)
                    case "integer":
                        return _parse_list(int)
                    case "number":
                        return _parse_list(float)
    if "anyOf" in type:
        # integer lists or a keyword such as "auto"
        return lambda string: string if string.isalpha() else _parse_list(int)(string)
    return str


def string(description: Optional[str] = None, default=None) -> Dict:
    return primitive("string", description, default)


def string_enum(values: List[str], description: Optional[str] = None, default=None):
    obj = string(description=description, default=default)
    obj["enum"] = values
    return obj


def any_of(types: List, description: Optional[str] = None, default=None) -> Dict:
    obj: Dict = dict()
    obj["anyOf"] = types
    if description is not None:
        obj["description"] = description
    if default is not None:
        obj["default"] = default
    return obj


def boolean(description: Optional[str] = None, default=None) -> Dict:
    return primitive("boolean", description, default)


def integer(description: Optional[str] = None, default=None, minimum=None) -> Dict:
    obj = primitive("integer", description, default)
    if minimum is not None:
        obj["minimum"] = minimum
    return obj


def number(description: Optional[str] = None, default=None, minimum=None) -> Dict:
    obj = primitive("number", description, default)
    if minimum is not None:
        obj["minimum"] = minimum
    return obj


def array(items=string(), description: Optional[str] = None, default=None):
    obj = dict({"type": "array", "items": items})
    if description is not None:
        obj["description"] = description
    if default is not None:
        obj["default"] = default
    return obj


block_set = any_of(
    [array(integer(minimum=0)), string_enum(["auto", "none", "initial", "later", "both"])],
    default="auto",
)

run = {
    "type": "object",
    "properties": {
        "checkpoint": string(description="Toy denoiser checkpoint (tensor container)"),
        "run_dir": string(description="Output root; DERAIN_RUN_DIR overrides it", default="runs"),
        "run_name": string(description="Run directory name instead of a timestamp"),
        "steps": integer(description="Number of diffusion steps T", default=100, minimum=2),
        "beta_start": number(default=1e-4),
        "beta_end": number(default=0.02),
        "schedule_kind": string_enum(["linear", "cosine"], default="linear"),
        "lambda": number(
            description="Negative-prompt guidance scale without attention switching",
            default=15.0,
            minimum=0,
        ),
        "lambda_switch": number(
            description="Guidance scale used when attention switching is active",
            default=25.0,
            minimum=0,
        ),
        "t_skip": integer(
            description="Initial denoising steps that follow the pure reconstruction path",
            default=40,
            minimum=0,
        ),
        "prompt_mode": string_enum(
            ["simple", "mean", "contextual", "implicit"],
            description="How the negative condition is built",
            default="contextual",
        ),
        "concept": string(description="Degradation concept", default="light rain"),
        "attn_switch": boolean(description="Switch text K/V to null-pass values", default=True),
        "blocks": block_set,
        "blocks_initial": block_set,
        "invert_with": string_enum(
            ["null", "concept"], description="Condition used during inversion", default="null"
        ),
        "inversion": string_enum(["ddpm", "ddim", "sdedit"], default="ddpm"),
        "seed": integer(default=0),
        "seeds": array(integer(), description="Seeds for studies and probes", default=[0, 1, 2, 3]),
        "num_videos": integer(description="Videos rendered or evaluated", default=10, minimum=1),
        "train_steps": integer(default=20000, minimum=0),
        "batch_size": integer(default=16, minimum=1),
        "learning_rate": number(default=1e-3),
        "p_drop": number(description="Condition dropout probability", default=0.1, minimum=0),
        "num_blocks": integer(default=8, minimum=1),
        "dim": integer(default=64, minimum=1),
        "heads": integer(default=4, minimum=1),
        "text_len": integer(default=4, minimum=1),
        "patch_size": integer(default=4, minimum=1),
        "frames": integer(default=4, minimum=2),
        "channels": integer(default=3, minimum=1),
        "height": integer(default=16, minimum=2),
        "width": integer(default=16, minimum=2),
        "input": string(description="Input video container or directory of PPM frames"),
        "clean": string(description="Clean ground-truth video container"),
        "flow": string(description="Ground-truth backward flow container"),
        "mask": string(description="Rain mask container"),
        "dataset": string(description="Directory written by gen-data"),
        "png": boolean(description="Also export PNG frames", default=False),
        "t_skip_values": array(integer(), description="Skip values for the inversion sweep"),
        "prompts": array(
            string(), description="Prompts for probes and the block study",
            default=["scene", "scene light rain", "scene heavy rain"],
        ),
        "attn_maps": boolean(description="Plot per-block attention maps", default=False),
        "verbose": boolean(default=False),
    },
}

schema = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "derain run config",
    "description": "Configuration",
    "type": "object",
    "properties": {
        "run": run,
        "commands": {"type": "object", "additionalProperties": run},
    },
}
