"""Numeric tolerances shared across the package.

All quantities in gfsolve are dimensionless but assumed to be expressed in a
single consistent unit system, so absolute tolerances below are meaningful at
desk scale (pressures squared of order 1e2..1e4, flows of order 1e-2..1e2).
"""

# Residual acceptance for a flow state claimed to solve the network equations.
EPS_FEAS = 1e-6

# Allowed imbalance |sum(q)| of an injection vector.
EPS_BAL = 1e-9

# Null-space membership / cycle decomposition reconstruction tolerance.
EPS_DECOMP = 1e-9

# Conic solver: absolute primal/dual feasibility and relative duality gap.
EPS_CONIC = 1e-8
EPS_GAP = 1e-8

# Iteration cap for one interior-point solve.
IPM_MAX_ITER = 200

# Default big-M constant for the flow-direction relaxation.
DEFAULT_BIG_M = 1e4

# Exactness threshold on the relaxation gap; results above it are inexact.
EPS_EXACT = 1e-4

# Relative-gap denominators below this switch to an absolute slack test.
EPS_DIV = 1e-12

# Agreement tolerance between independent solvers (uniqueness checks).
EPS_AGREE = 1e-5

# Residual bound required of oracle solutions used to pin golden data.
EPS_ORACLE = 1e-8
