import os
import platform
import sys
from typing import Dict

import psutil
import torch

try:
    import resource
except ImportError:
    resource = None


def get_core_count() -> int:
    return psutil.cpu_count(logical=False) or psutil.cpu_count() or 1


def configure_threads() -> int:
    """Pin the torch intra-op pool to the physical core count."""
    threads = get_core_count()
    torch.set_num_threads(threads)
    return threads


def peak_rss_mb() -> float:
    """High-water mark of the resident set size of this process."""
    if resource is None:
        # Windows exposes the peak working set instead
        return psutil.Process(os.getpid()).memory_info().peak_wset / 2**20
    peak = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    # kilobytes on Linux, bytes on macOS
    return peak / 2**20 if sys.platform == "darwin" else peak / 2**10


def host_facts() -> Dict:
    return {
        "platform": platform.platform(),
        "python": platform.python_version(),
        "torch": torch.__version__,
        "physical_cores": get_core_count(),
        "logical_cores": psutil.cpu_count(),
        "total_memory_mb": round(psutil.virtual_memory().total / 2**20),
        "torch_threads": torch.get_num_threads(),
    }
