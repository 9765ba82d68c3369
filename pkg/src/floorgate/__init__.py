"""Launch-readiness decisions for reserve/floor policies replayed over logged RTB auctions."""
from ._accel import backend

__version__ = "0.1.0"

__all__ = ["backend", "__version__"]
