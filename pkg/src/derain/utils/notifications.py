import logging
from typing import Optional

from derain.utils.manifest import RunManifest


def notify_error(
    summary: Optional[str] = None,
    body: Optional[str] = None,
    manifest: Optional[RunManifest] = None,
):
    if summary is None:
        summary = "derain error"
    if body is None:
        body = "An error has ocurred"

    logging.error(f"{summary}: {body}")

    if manifest is not None:
        manifest.fail(RuntimeError(f"{summary}: {body}"))
