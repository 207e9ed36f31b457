import os

from dotenv import load_dotenv

load_dotenv()

NODES: int = int(os.getenv("BE_NODES", 256))
CHEB_DEGREE: int = int(os.getenv("BE_CHEB_DEGREE", 128))
INNER_NODES: int = int(os.getenv("BE_INNER_NODES", 64))
QUAD_TOL: float = float(os.getenv("BE_QUAD_TOL", 1e-10))

TOL_EQ: float = float(os.getenv("BE_TOL_EQ", 1e-7))
MAX_OUTER: int = int(os.getenv("BE_MAX_OUTER", 200))
DAMPING: float = float(os.getenv("BE_DAMPING", 0.5))

TOL_INV: float = float(os.getenv("BE_TOL_INV", 1e-7))
THETA_TOL: float = float(os.getenv("BE_THETA_TOL", 1e-12))
FD_TOL: float = float(os.getenv("BE_FD_TOL", 1e-4))
FD_STEP: float = float(os.getenv("BE_FD_STEP", 0.02))
T_NODES: int = int(os.getenv("BE_T_NODES", 16))
MAX_TENSOR: int = int(os.getenv("BE_MAX_TENSOR", 20_000_000))

DEFAULT_SEED: int = int(os.getenv("BE_SEED", 7))
JOBS: int = int(os.getenv("BE_JOBS", 0)) or (os.cpu_count() or 1)
LOG_LEVEL: str = os.getenv("BE_LOG_LEVEL", "INFO")

if NODES < 16 or NODES % 2:
    raise ValueError("BE_NODES must be an even integer >= 16")
if INNER_NODES < 16 or INNER_NODES % 2:
    raise ValueError("BE_INNER_NODES must be an even integer >= 16")
if not 0.0 < DAMPING <= 1.0:
    raise ValueError("BE_DAMPING must lie in (0, 1]")
