"""Scene ingestion, replay ordering, persistence, and configuration."""

from .colmap import read_colmap_text
from .config import parse_config_file, parse_config_text
from .images import decode_ppm, load_images, read_image
from .ply import read_ply, write_ply
from .replay import FlyInEvent, ReplayStream, SceneBundle

__all__ = [
    "FlyInEvent",
    "ReplayStream",
    "SceneBundle",
    "decode_ppm",
    "load_images",
    "parse_config_file",
    "parse_config_text",
    "read_colmap_text",
    "read_image",
    "read_ply",
    "write_ply",
]
