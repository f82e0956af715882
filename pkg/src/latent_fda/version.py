"""Version information for :mod:`latent_fda`.

Run with ``python -m latent_fda.version``. The version is also written into the
manifest of every fitted run.
"""

import subprocess
from pathlib import Path

__all__ = [
    "VERSION",
    "get_git_hash",
    "get_version",
]

VERSION = "0.0.1-dev"

HERE = Path(__file__).parent.resolve()


def get_git_hash() -> str:
    """Get the :mod:`latent_fda` git hash, or ``UNHASHED`` outside of a checkout."""
    try:
        result = subprocess.run(
            ["git", "rev-parse", "HEAD"],
            cwd=HERE,
            capture_output=True,
            check=True,
        )
    except (subprocess.CalledProcessError, FileNotFoundError):
        return "UNHASHED"
    return result.stdout.strip().decode("utf-8")[:8]


def get_version(with_git_hash: bool = False) -> str:
    """Get the :mod:`latent_fda` version string, optionally including a git hash."""
    return f"{VERSION}-{get_git_hash()}" if with_git_hash else VERSION


if __name__ == "__main__":
    print(get_version(with_git_hash=True))  # noqa:T201
