"""
Bundled example models.
"""

from pathlib import Path
from typing import List

from wcet.core.model import Pta, load_model

MODELS_DIR = Path(__file__).resolve().parent


def bundled_model_path(name: str) -> Path:
    """Path of a bundled model, with or without the .pta suffix"""
    path = MODELS_DIR / (name if name.endswith(".pta") else f"{name}.pta")
    if not path.is_file():
        raise FileNotFoundError(f"No bundled model named {name} in {MODELS_DIR}")
    return path


def bundled_models() -> List[str]:
    return sorted(path.stem for path in MODELS_DIR.glob("*.pta"))


def load_bundled(name: str) -> Pta:
    return load_model(bundled_model_path(name))


__all__ = [
    'MODELS_DIR',
    'bundled_model_path',
    'bundled_models',
    'load_bundled',
]
