"""Impulse control of one-dimensional diffusions with implementation delay."""
