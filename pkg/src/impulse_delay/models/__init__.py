"""Concrete worked models."""
