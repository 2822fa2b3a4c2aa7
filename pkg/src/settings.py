"""
Runtime configuration read from the environment (and an optional .env file).
"""
import logging
import os
from typing import Any, Dict, Optional

from dotenv import load_dotenv

from .errors import ResourceError

logger = logging.getLogger(__name__)

# Load environment variables
load_dotenv()

DEFAULT_BLOCK_SIZE = 4096
DEFAULT_MEMORY_LIMIT_MB = 4096


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        value = int(raw)
    except ValueError:
        logger.warning(f"Ignoring non-integer {name}={raw!r}, using {default}")
        return default
    if value < 1:
        logger.warning(f"Ignoring non-positive {name}={value}, using {default}")
        return default
    return value


def get_runtime_config() -> Dict[str, Any]:
    """Get runtime configuration from environment variables."""
    return {
        'threads': _env_int('HAMSIM_THREADS', os.cpu_count() or 1),
        'block_size': _env_int('HAMSIM_BLOCK_SIZE', DEFAULT_BLOCK_SIZE),
        'memory_limit_mb': _env_int('HAMSIM_MEMORY_LIMIT_MB', DEFAULT_MEMORY_LIMIT_MB),
        'log_level': os.getenv('HAMSIM_LOG_LEVEL', 'INFO').upper(),
        'log_file': os.getenv('HAMSIM_LOG_FILE', 'hamsim.log'),
        'database_url': os.getenv('HAMSIM_DATABASE_URL', ''),
    }


def check_dense_budget(rows: int, cols: int, what: str, memory_limit_mb: Optional[int] = None) -> None:
    """Raise ResourceError when a dense complex rows×cols array would exceed the memory budget."""
    if memory_limit_mb is None:
        memory_limit_mb = get_runtime_config()['memory_limit_mb']
    needed_mb = rows * cols * 16 / 2**20
    if needed_mb > memory_limit_mb:
        raise ResourceError(
            f"{what} needs {needed_mb:.1f} MiB ({rows}x{cols} complex), "
            f"budget is {memory_limit_mb} MiB (HAMSIM_MEMORY_LIMIT_MB)"
        )
