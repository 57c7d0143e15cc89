"""Toolflow for streaming dataflow accelerators of YOLO-style networks."""

from importlib.resources import files

__version__ = "0.1.0"


def data_path(*parts: str):
    """Path to a bundled fixture, e.g. ``data_path("networks", "yolov5n.json")``."""
    return files(__name__).joinpath("data", *parts)
