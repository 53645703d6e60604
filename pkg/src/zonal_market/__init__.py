"""Clearing, equilibrium and learning tools for zonal ancillary-service auctions."""

__version__ = "0.1.0"
