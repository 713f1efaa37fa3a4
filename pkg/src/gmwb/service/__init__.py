"""HTTP service exposing the pricing engine; the CLI reuses the same handlers."""
from .handlers import fair_fee, price, verify

__all__ = ["fair_fee", "price", "verify"]
