"""Device-native bilateral negotiation under private constraints."""

__version__ = "0.1.0"
