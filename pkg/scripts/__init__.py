"""Utility scripts for GSMo experiments."""
