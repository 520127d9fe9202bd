"""
Application configuration settings loaded from the environment.
"""

import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path

from dotenv import load_dotenv

from app.utils.errors import ConfigError

# Load environment variables from .env file
load_dotenv()

# Iterative solver defaults
SOLVER_CONFIG = {
    "tol": float(os.getenv("FRAC_SOLVER_TOL", "1e-10")),
    "max_iter_factor": int(os.getenv("FRAC_SOLVER_MAXITER_FACTOR", "10")),
}

# Pseudo-parabolic D^{-1/2} defaults
PSEUDO_CONFIG = {
    "k_steps": int(os.getenv("FRAC_K_PSEUDO", "100")),
    "integrator": os.getenv("FRAC_INTEGRATOR", "crank_nicolson"),
}

# Time-stepping defaults
SCHEME_CONFIG = {
    "scheme": os.getenv("FRAC_SCHEME", "regularized2"),
    "sigma": float(os.getenv("FRAC_SIGMA", "0.25")),
    "n_steps": int(os.getenv("FRAC_N_STEPS", "100")),
    "sqrt_backend": os.getenv("FRAC_SQRT_BACKEND", "pseudo_parabolic"),
}

# Verification experiment defaults
EXPERIMENT_CONFIG = {
    "mesh_level": int(os.getenv("FRAC_MESH_LEVEL", "2")),
    "mu": float(os.getenv("FRAC_MU", "10")),
    "delta": float(os.getenv("FRAC_DELTA", "1")),
    "t_final": float(os.getenv("FRAC_T_FINAL", "0.25")),
    "oracle_max_dim": int(os.getenv("FRAC_ORACLE_MAX_DIM", "5000")),
}

# Application Configuration
APP_CONFIG = {
    "debug": os.getenv("APP_DEBUG", "False").lower() == "true",
    "log_level": os.getenv("APP_LOG_LEVEL", "INFO").upper(),
}


def load_experiment_file(path) -> dict:
    """Read a TOML experiment file into a flat key/value dict.

    Keys may sit at top level or inside an ``[experiment]`` table; the table
    wins on conflicts.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with path.open("rb") as handle:
            data = tomllib.load(handle)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    flat = {key: value for key, value in data.items() if not isinstance(value, dict)}
    section = data.get("experiment", {})
    if not isinstance(section, dict):
        raise ConfigError(f"{path}: [experiment] must be a table")
    flat.update(section)
    unknown_tables = [key for key, value in data.items() if isinstance(value, dict) and key != "experiment"]
    if unknown_tables:
        raise ConfigError(f"{path}: unknown table(s) {', '.join(sorted(unknown_tables))}")
    return flat
