"""Tile-based splatting renderer: projection, forward blend, backward passes."""

from .forward import RenderOutput, render
from .backward import FieldGrads, backward
from .projection import ProjectedSplats, project_field

__all__ = [
    "FieldGrads",
    "ProjectedSplats",
    "RenderOutput",
    "backward",
    "project_field",
    "render",
]
