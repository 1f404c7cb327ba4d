"""HWDNet: hybrid-weights decoupling network for UAV RGB-IR vehicle re-identification."""

__version__ = "0.1.0"
