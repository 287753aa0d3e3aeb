"""
Module-level defaults for the surface alignment toolkit.

Values here are the fallbacks used by surfalign.settings when a run config
does not override them.
"""
import os

# Output locations
OUT_DIR = os.environ.get("SURFALIGN_OUT_DIR", "runs")
MANIFEST_NAME = "manifest.json"
RESOLVED_CONFIG_NAME = "resolved_config.json"

# Reproducibility
DEFAULT_SEED = 1234
SEED_ENV_VAR = "SIM_SEED"

# Logging
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

# Geometry
MAX_ICO_LEVEL = 8
PATCH_LEVEL_GAP = 3

# Synthetic world
DEFAULT_HARMONIC_ORDER = 8
CLIP_SECONDS = 3
TR_SECONDS = 1
LAG_SECONDS = 6

# Alignment
DEFAULT_TEMPERATURE = 0.07
DEFAULT_CLIP_DIM = 256

# Retrieval
BUFFER_SECONDS = 3
CI_Z = 1.96
