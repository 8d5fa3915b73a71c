import datetime
import hashlib
import json
import logging
import os
from typing import Dict, List, Optional

from derain import __version__
from derain.errors import DerainError
from derain.utils.hostinfo import host_facts


class ManifestError(DerainError):
    pass


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as file:
        for chunk in iter(lambda: file.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


class RunManifest:
    """manifest.json of one run directory, rewritten on every status change."""

    def __init__(self, run_dir: str, config: Dict, seeds: Optional[List[int]] = None):
        self.run_dir = run_dir
        self.path = os.path.join(run_dir, "manifest.json")
        self.data = {
            "status": "running",
            "started": datetime.datetime.now().isoformat(timespec="seconds"),
            "version": __version__,
            "config": config,
            "seeds": seeds or [],
            "host": host_facts(),
            "outputs": {},
            "error": None,
        }
        self.write()

    def add_output(self, path: str):
        rel = os.path.relpath(path, self.run_dir)
        self.data["outputs"][rel] = sha256_file(path)

    def add_outputs(self, paths: List[str]):
        for path in paths:
            self.add_output(path)
        self.write()

    def complete(self):
        self.data["status"] = "complete"
        self.write()

    def fail(self, error: Exception):
        self.data["status"] = "incomplete"
        self.data["error"] = str(error)
        self.write()

    def write(self):
        with open(self.path, "w") as file:
            json.dump(self.data, file, indent=2, sort_keys=True)


def read_manifest(path: str) -> Dict:
    try:
        with open(path) as file:
            data = json.load(file)
    except (OSError, json.JSONDecodeError) as e:
        raise ManifestError(f"Failed to read manifest {path}: {e}")
    if "config" not in data:
        raise ManifestError(f"manifest {path} has no config")
    logging.info(f"Loaded manifest {path} ({data.get('status')})")
    return data
