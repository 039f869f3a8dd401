"""Compactly supported subsolutions and convex-integration steps for semi-stationary Euler."""
