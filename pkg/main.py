#!/usr/bin/env python3
"""
Entry point for wildflow.

Usage:
    python main.py build --config run.cfg
    python main.py perturb data/runs/build-<hash> --steps 10
    python main.py verify data/runs/build-<hash>

Environment variables (all optional, see config/settings.py):
    GRID_DIMS, EPSILON, SPECTRAL_TOL, WAVE_FREQUENCY, LOG_LEVEL, ...
"""
import os
import sys

# Ensure project root is on the path regardless of how the script is invoked
sys.path.insert(0, os.path.dirname(__file__))

from src.cli import cli  # noqa: E402

if __name__ == "__main__":
    cli()
