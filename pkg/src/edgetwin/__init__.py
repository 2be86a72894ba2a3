"""Two-timescale accuracy-aware optimizer and simulator for edge-hosted
virtual twins: frame-scale model placement and access selection, slot-scale
update/offloading/resource allocation, driven by virtual-queue
drift-plus-penalty control.
"""

__version__ = "0.1.0"

from .costs import LargeDecision, SmallDecision  # noqa: F401
from .scenario import Scenario, SlotState, build_scenario, draw_slot  # noqa: F401
