"""Decoded-image cache and the CSV, JSON and SVG report writers."""
