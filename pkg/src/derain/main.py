import copy
import datetime
import logging
import os
import sys
from typing import List, Optional

from derain.commands import builtins, create_command, get_command_type
from derain.config import Config, ConfigError, RunConfig
from derain.errors import DerainError
from derain.utils.hostinfo import configure_threads, peak_rss_mb
from derain.utils.manifest import RunManifest, read_manifest
from derain.utils.notifications import notify_error

LOG_FORMAT = "[{levelname}({name}):{filename}:{funcName}] {message}"


def main(argv: Optional[List[str]] = None) -> int:
    setup_logging()
    try:
        config = Config(command_names=list(builtins) + ["replay"], argv=argv)
        run_config = resolve_run_config(config)
        if run_config.verbose:
            logging.getLogger().setLevel(logging.DEBUG)
        get_command_type(run_config.command).check(run_config)
        run_dir = make_run_dir(run_config)
    except DerainError as e:
        notify_error(summary="Invalid configuration", body=str(e))
        return 1
    handler = attach_run_log(run_dir)
    seeds = [run_config.seed] + list(run_config.seeds or [])
    manifest = RunManifest(run_dir, run_config.to_dict(), seeds)
    threads = configure_threads()
    logging.info(f"Running {run_config.command} in {run_dir} with {threads} threads")
    try:
        command = create_command(
            run_config.command, run_config=run_config, run_dir=run_dir, manifest=manifest
        )
        command.run()
    except DerainError as e:
        notify_error(summary=f"{run_config.command} failed", body=str(e), manifest=manifest)
        return 1
    except Exception as e:
        notify_error(summary="Uncaught error", body=repr(e), manifest=manifest)
        raise
    finally:
        manifest.data["peak_rss_mb"] = peak_rss_mb()
        logging.getLogger().removeHandler(handler)
        handler.close()
    manifest.complete()
    logging.info(f"Finished {run_config.command}, outputs in {run_dir}")
    return 0


def resolve_run_config(config: Config) -> RunConfig:
    if config.command != "replay":
        return config.get_run_config()
    if config.target is None:
        raise ConfigError("replay needs the manifest to replay")
    recorded = copy.deepcopy(read_manifest(config.target)["config"])
    current = config.get_run_config("replay")
    # outputs go to a fresh directory under the current output root
    recorded["run"]["run_dir"] = current.run_dir
    if "run_name" in config.explicit:
        recorded["run"]["run_name"] = current.run_name
    else:
        recorded["run"].pop("run_name", None)
    logging.info(f"Replaying {recorded['command']} from {config.target}")
    return RunConfig.from_dict(recorded)


def make_run_dir(run_config: RunConfig) -> str:
    name = run_config.run_name or datetime.datetime.now().strftime("%Y%m%d-%H%M%S-%f")
    run_dir = os.path.join(run_config.run_dir, f"{run_config.command}-{name}")
    if os.path.exists(run_dir):
        raise ConfigError(f"run directory {run_dir} already exists")
    os.makedirs(run_dir)
    return run_dir


def setup_logging():
    logging.basicConfig(
        level=logging.INFO,
        style="{",
        format=LOG_FORMAT,
    )


def attach_run_log(run_dir: str) -> logging.Handler:
    handler = logging.FileHandler(os.path.join(run_dir, "run.log"))
    handler.setFormatter(logging.Formatter(LOG_FORMAT, style="{"))
    logging.getLogger().addHandler(handler)
    return handler


if __name__ == "__main__":
    sys.exit(main())
