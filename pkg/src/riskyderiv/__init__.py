"""Pricing and replication checks for default-risky, collateralized derivatives."""
__version__ = "0.1.0"
