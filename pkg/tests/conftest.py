import sys
from importlib import resources
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))


def structure_path(name: str) -> str:
    return str(resources.files("t2screen.data").joinpath(f"structures/{name}.json"))
