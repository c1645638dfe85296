import os

# Read after cli.py has called load_dotenv().
STATE_CAP = int(os.getenv("CACHECHAIN_STATE_CAP", "1000000"))
DENSE_LIMIT = int(os.getenv("CACHECHAIN_DENSE_LIMIT", "5000"))
N_JOBS = int(os.getenv("CACHECHAIN_N_JOBS", "1"))
LOG_LEVEL = os.getenv("CACHECHAIN_LOG_LEVEL", "INFO")

# Tolerances
SIMPLEX_TOL = 1e-12
RESIDUAL_TOL = 1e-9
SNAP_TOL = 1e-15
