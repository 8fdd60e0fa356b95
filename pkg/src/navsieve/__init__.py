"""Learned departure-angle sampling for local trajectory planning."""
