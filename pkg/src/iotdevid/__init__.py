"""Per-packet IoT device identification with MAC-majority aggregation."""

__version__ = "0.1.0"
