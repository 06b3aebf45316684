"""DelayWalk settings: numerical defaults and runtime overrides."""

import os

from dotenv import load_dotenv

load_dotenv()

# Project identity
PROJECT_NAME = "delaywalk"

# Quadrature on [-1, 0]
# Gauss-Legendre nodes are doubled until two successive results agree
QUADRATURE_NODES = 64
QUADRATURE_RTOL = 1e-10
QUADRATURE_MAX_NODES = 4096

# Atomic measures
ATOM_WEIGHT_FLOOR = 1e-15
PROBABILITY_MASS_TOL = 1e-12

# Delay differential equation
DDE_STEP = 1e-3
# Extra time solved past the simulation horizon
DDE_HORIZON_PAD = 1.0

# Asymptotic constants
# Eigenvalues of Sigma below this fraction of its trace count as kernel
KERNEL_EIGEN_RTOL = 1e-12
# H(t) grid step is min(RECENTRING_MAX_STEP, horizon / RECENTRING_GRID_POINTS)
RECENTRING_MAX_STEP = 0.01
RECENTRING_GRID_POINTS = 10_000
# Mean path E X(t) integration step; 1/step must be an integer
MEAN_PATH_STEP = 0.01

# Lattice oracle
LATTICE_STEP = 1e-3
LATTICE_BOUNDARY_MASS = 1e-14
LATTICE_MASS_LEAK = 1e-8
# Raw mass of a reported law must be within this of 1
LATTICE_MASS_TOL = 1e-10

# Per-theta initial history: number of equal cells on [-1, 0]
HISTORY_CELLS = 16

# Verification
KS_ALPHA = 0.01
KS_SLACK = 1.5
KERNEL_AXIS_TOL = 1e-12
KS_TREND_SLACK = 0.02
CI_SIGMAS = 3.0

# Output
JSON_SIGNIFICANT_DIGITS = 15
OUTPUT_DIR = os.getenv("DELAYWALK_OUTPUT_DIR", "output")

# Runtime
WORKERS = int(os.getenv("DELAYWALK_WORKERS", "1"))
LOG_LEVEL = os.getenv("DELAYWALK_LOG_LEVEL", "WARNING")
