"""
Configuration file for the planar domain parameterizer
Contains logging settings, data paths and the default pipeline parameters
"""

import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

# Logging
LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO')

# File Paths
DATA_DIR = os.getenv('DATA_DIR', 'data')
BOUNDARY_DIR = os.path.join(DATA_DIR, "boundaries")

# Document format
DOCUMENT_FORMAT_VERSION = "1.0"

# Segmentation objective weights (stretch/strain, uniformity/shape/tangent)
DEFAULT_SIGMA1 = 2.0
DEFAULT_SIGMA2 = 1.0
DEFAULT_OMEGA1 = 2.0
DEFAULT_OMEGA2 = 1.0
DEFAULT_OMEGA3 = 50.0

# Inner-point energy weights
DEFAULT_TAU1 = 2.0
DEFAULT_TAU2 = 1.5

# Topology
DEFAULT_EPSILON = 0.1
DEFAULT_SMOOTHING_TOLERANCE = 0.001
SMOOTHING_MAX_ITERATIONS = 1000
DOMAIN_SAMPLES = 8
MESH_REFINEMENT_ATTEMPTS = 2
MIN_PATCH_DEGREE = 4

# L-BFGS
LBFGS_MEMORY = 10
LBFGS_TOLERANCE = 1e-6
LBFGS_MAX_ITERATIONS = 500
VALIDITY_RESTARTS = 3

# Log-barrier repair
BARRIER_FLOOR = 1e-8
BARRIER_INITIAL_SCALE = 1e-2
BARRIER_DECREASE = 0.1
BARRIER_STAGES = 5
REPAIR_MAX_ITERATIONS = 200
REPAIR_TOLERANCE = 1e-9
REPAIR_RESTARTS = 2

# Quality sampling and rendering
DEFAULT_GRID = 30
DEFAULT_ISO_COUNT = 8
DEFAULT_SEED = 0

# Named objective weight rows:
# (sigma1, sigma2, omega1, omega2, omega3, tau1, tau2)
WEIGHT_PRESETS = {
    'default': (2.0, 1.0, 2.0, 1.0, 50.0, 2.0, 1.5),
    'smooth': (1.0, 1.0, 1.0, 1.0, 50.0, 1.0, 1.5),
    'strain': (1.0, 2.0, 1.0, 2.0, 50.0, 1.0, 2.0),
    'stretch': (2.0, 1.0, 1.0, 2.0, 50.0, 2.0, 1.0),
    'uniform': (2.0, 1.0, 2.0, 2.0, 50.0, 2.0, 1.0),
}
