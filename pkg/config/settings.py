"""
Central configuration for the wildflow toolkit.
Numeric defaults for grids, tolerances and the perturbation loop are read from
environment variables (a local .env file is honoured), falling back to the
values below. Run-config files override these per run; see src/models.RunConfig.
"""
import logging
import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

logger = logging.getLogger(__name__)

# ── Paths ──────────────────────────────────────────────────────────────────
BASE_DIR = Path(__file__).resolve().parent.parent
DATA_DIR = BASE_DIR / "data"
RUNS_DIR = DATA_DIR / "runs"


def get_setting(name: str, default: str = "") -> str:
    """Read a setting from the environment, falling back to ``default``.

    The environment always wins so that CI jobs and one-off experiments can
    override any value without touching a config file.
    """
    env_val = os.getenv(name)
    if env_val is not None:
        return env_val
    return default


def _get_int_setting(name: str, default: int) -> int:
    """Fetch a setting and convert to int, with validation."""
    val = get_setting(name, str(default))
    try:
        return int(val)
    except ValueError:
        logger.warning("Invalid integer for %s: %r, using default %d", name, val, default)
        return default


def _get_float_setting(name: str, default: float) -> float:
    """Fetch a setting and convert to float, with validation."""
    val = get_setting(name, repr(default))
    try:
        return float(val)
    except ValueError:
        logger.warning("Invalid float for %s: %r, using default %g", name, val, default)
        return default


# ── Grid & geometry ────────────────────────────────────────────────────────
# Ω is a disc of radius OMEGA_RADIUS, Ω′ a concentric disc of radius
# OUTER_RADIUS; the periodic box must exceed Ω′ by at least 2ε.
GRID_DIMS: int = _get_int_setting("GRID_DIMS", 128)
SPATIAL_DIM: int = _get_int_setting("SPATIAL_DIM", 2)
BOX_HALF_WIDTH: float = _get_float_setting("BOX_HALF_WIDTH", 1.25)
OMEGA_RADIUS: float = _get_float_setting("OMEGA_RADIUS", 0.4)
OUTER_RADIUS: float = _get_float_setting("OUTER_RADIUS", 0.8)
EPSILON: float = _get_float_setting("EPSILON", 0.2)
MIN_GRID_POINTS = 16

# ── Time sampling ──────────────────────────────────────────────────────────
HORIZON: float = _get_float_setting("HORIZON", 1.0)
TIME_SAMPLES: int = _get_int_setting("TIME_SAMPLES", 33)

# ── Tolerances ─────────────────────────────────────────────────────────────
# Spectral identities hold to roundoff.  QUADRATURE_TOL bounds everything that
# passes through the Bogovskii quadrature, the support of m and U included;
# SUPPORT_TOL bounds the leakage of u outside Ω^ε.  COMPATIBILITY_TOL is the
# largest relative mass |∫p|/∫|p| over Ω′ that is projected out rather than
# rejected.
SPECTRAL_TOL: float = _get_float_setting("SPECTRAL_TOL", 1e-8)
QUADRATURE_TOL: float = _get_float_setting("QUADRATURE_TOL", 1e-3)
SUPPORT_TOL: float = _get_float_setting("SUPPORT_TOL", 1e-6)
ADMISSIBILITY_TOL: float = _get_float_setting("ADMISSIBILITY_TOL", 1e-10)
COMPATIBILITY_TOL: float = _get_float_setting("COMPATIBILITY_TOL", 1e-6)
TRACE_TOL: float = 1e-12

# ── Bogovskii quadrature ───────────────────────────────────────────────────
BOGOVSKII_ANGLES: int = _get_int_setting("BOGOVSKII_ANGLES", 256)
BOGOVSKII_RAY_NODES: int = _get_int_setting("BOGOVSKII_RAY_NODES", 96)
BOGOVSKII_CHUNK: int = _get_int_setting("BOGOVSKII_CHUNK", 64)
# Source samples are taken from a spectrally refined copy of p; each
# refinement pass solves once more for the divergence defect.
BOGOVSKII_UPSAMPLE: int = _get_int_setting("BOGOVSKII_UPSAMPLE", 2)
BOGOVSKII_REFINEMENTS: int = _get_int_setting("BOGOVSKII_REFINEMENTS", 1)

# ── Perturbation loop ──────────────────────────────────────────────────────
WAVE_FREQUENCY: float = _get_float_setting("WAVE_FREQUENCY", 16.0)
HULL_MARGIN: float = _get_float_setting("HULL_MARGIN", 0.05)
SEARCH_BUDGET: int = _get_int_setting("SEARCH_BUDGET", 16)
STAGNATION_LIMIT: int = _get_int_setting("STAGNATION_LIMIT", 5)
DEFAULT_SEED: int = _get_int_setting("DEFAULT_SEED", 0)

# ── Logging ────────────────────────────────────────────────────────────────
LOG_LEVEL: str = get_setting("LOG_LEVEL", "INFO").upper()


def validate_run_settings() -> None:
    """Raise SystemExit if the numeric defaults cannot produce a valid run.

    Checks:
      1. Every tolerance is strictly positive.
      2. The grid has at least MIN_GRID_POINTS points per axis.
      3. Ω^ε sits inside Ω′, and Ω′ plus a 2ε margin sits inside the box.
    """
    for name in (
        "SPECTRAL_TOL", "QUADRATURE_TOL", "SUPPORT_TOL", "ADMISSIBILITY_TOL", "COMPATIBILITY_TOL",
    ):
        value = globals()[name]
        if not value > 0:
            raise SystemExit(f"FATAL: {name} must be positive, got {value!r}.")

    if GRID_DIMS < MIN_GRID_POINTS:
        raise SystemExit(
            f"FATAL: GRID_DIMS must be at least {MIN_GRID_POINTS}, got {GRID_DIMS}."
        )

    if OMEGA_RADIUS + EPSILON >= OUTER_RADIUS:
        raise SystemExit(
            "FATAL: OUTER_RADIUS must exceed OMEGA_RADIUS + EPSILON "
            f"({OUTER_RADIUS} <= {OMEGA_RADIUS} + {EPSILON})."
        )

    if OUTER_RADIUS + 2 * EPSILON > BOX_HALF_WIDTH:
        raise SystemExit(
            "FATAL: BOX_HALF_WIDTH must leave a 2*EPSILON margin around Ω′ "
            f"({BOX_HALF_WIDTH} < {OUTER_RADIUS} + 2*{EPSILON})."
        )
