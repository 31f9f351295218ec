"""Location inference from SMS delivery-report timings."""

__version__ = "0.1.0"
