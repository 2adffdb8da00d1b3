"""
Locations of files bundled with the package.
"""
from functools import lru_cache
from importlib import resources
from pathlib import Path

__all__ = ["data_path", "reference_event_path"]


@lru_cache
def data_path(name: str, package: str = "convex_cam.data") -> Path:
    """
    Returns the path of a data file shipped inside ``package``.

    Raises ``FileNotFoundError`` when the package does not hold the file.
    """
    path = Path(str(resources.files(package).joinpath(name)))
    if not path.is_file():
        raise FileNotFoundError(f"Couldn't find {name} in {package}")
    return path


def reference_event_path() -> Path:
    """The bundled reference encounter, in the two-column appendix layout."""
    return data_path("reference_event.txt")
