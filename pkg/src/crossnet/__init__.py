"""Joint clustering of agencies from mono-product choices and co-subscription networks."""

__version__ = "0.1.0"
