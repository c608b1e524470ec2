"""Bundled case files."""

from importlib import resources
from pathlib import Path


def case_path(name: str) -> Path:
    """Filesystem path of a bundled case, e.g. ``ieee69`` or ``toy2``."""
    ref = resources.files(__package__) / f"{name}.json"
    return Path(str(ref))
