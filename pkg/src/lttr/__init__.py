"""Point-cloud single-object tracking with a region transformer on a Siamese voxel backbone."""

from .config import RunConfig, paper_config
from .model import LTTR

__all__ = ["LTTR", "RunConfig", "paper_config"]
__version__ = "0.1.0"
