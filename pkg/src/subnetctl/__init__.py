"""subnetctl: co-simulation of LQR plants over interference-limited wireless
subnetworks, plus multi-objective TPE search over control-aware power policies."""

__version__ = "0.1.0"
