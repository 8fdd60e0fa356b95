"""Bundled sector worlds."""
