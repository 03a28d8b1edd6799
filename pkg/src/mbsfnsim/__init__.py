"""System-level simulator of multicast vs unicast delivery of periodic
vehicular awareness messages over a synchronized LTE cell cluster."""

from .engine import ScenarioConfig, RunRecord, run, replicate

__all__ = ["ScenarioConfig", "RunRecord", "run", "replicate"]
__version__ = "0.1.0"
