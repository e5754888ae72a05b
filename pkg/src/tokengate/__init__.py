"""tokengate: hardware-token-driven configuration for encryption gateways."""

__version__ = "0.1.0"
