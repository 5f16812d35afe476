"""Bundled scenario documents."""

from __future__ import annotations

from pathlib import Path

SCENARIO_DIR = Path(__file__).resolve().parent


def bundled_path(name: str) -> Path:
    """Return the path of a bundled scenario by file name or stem (e.g. `"desk4"`)."""
    path = SCENARIO_DIR / (name if name.endswith(".json") else f"{name}.json")
    if not path.is_file():
        available = sorted(p.stem for p in SCENARIO_DIR.glob("*.json"))
        raise FileNotFoundError(f"No bundled scenario {name!r}; available: {available}")
    return path
