import os
from dataclasses import dataclass


def _env_float(name: str, default: float) -> float:
    value = os.environ.get(name)
    return float(value) if value else default


def _env_int(name: str, default: int) -> int:
    value = os.environ.get(name)
    return int(value) if value else default


@dataclass(frozen=True)
class Settings:
    """
    Numerical defaults. Every value can be overridden through the environment
    (BIDIAG_* variables) and every library call takes explicit overrides.
    """

    service_name: str = "bidiag-update"
    tol_ortho: float = 1e-10
    breakdown_tol: float = 1e-14
    jacobi_tol: float = 1e-12
    jacobi_max_sweeps: int = 60
    jacobi_max_order: int = 512
    eps_aug: float = 1e-12
    drift_threshold: float = 1e-8
    drift_floor: float = 1e-12
    drift_subset: int = 32
    drift_full_every: int = 64
    oversample: int = 5
    seed: int = 0


def load_settings() -> Settings:
    return Settings(
        service_name=os.environ.get("POWERTOOLS_SERVICE_NAME", "bidiag-update"),
        tol_ortho=_env_float("BIDIAG_TOL_ORTHO", 1e-10),
        breakdown_tol=_env_float("BIDIAG_BREAKDOWN_TOL", 1e-14),
        jacobi_tol=_env_float("BIDIAG_JACOBI_TOL", 1e-12),
        jacobi_max_sweeps=_env_int("BIDIAG_JACOBI_MAX_SWEEPS", 60),
        jacobi_max_order=_env_int("BIDIAG_JACOBI_MAX_ORDER", 512),
        eps_aug=_env_float("BIDIAG_EPS_AUG", 1e-12),
        drift_threshold=_env_float("BIDIAG_DRIFT_THRESHOLD", 1e-8),
        drift_floor=_env_float("BIDIAG_DRIFT_FLOOR", 1e-12),
        drift_subset=_env_int("BIDIAG_DRIFT_SUBSET", 32),
        drift_full_every=_env_int("BIDIAG_DRIFT_FULL_EVERY", 64),
        oversample=_env_int("BIDIAG_OVERSAMPLE", 5),
        seed=_env_int("BIDIAG_SEED", 0),
    )


SETTINGS = load_settings()
