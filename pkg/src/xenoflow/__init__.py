"""XenoFlow: a software eSwitch flow-pipe model, an L3 load balancer built on
it, and a calibrated fabric simulator with a benchmark harness."""

__version__ = "0.1.0"

from ._speed import active_backend  # noqa: F401
