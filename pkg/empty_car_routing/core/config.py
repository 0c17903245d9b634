from pydantic_settings import BaseSettings, SettingsConfigDict
from typing import Optional


class Settings(BaseSettings):
    output_dir: str = "output_results"
    log_level: str = "INFO"

    # Stochasticity checks
    stochastic_tol: float = 1e-9
    renormalized_tol: float = 1e-12
    fluid_mass_tol: float = 1e-8
    routing_drift_tol: float = 1e-9

    # Revised simplex
    lp_pivot_tol: float = 1e-10
    lp_relative_pivot_tol: float = 1e-7
    lp_feasibility_tol: float = 1e-9
    lp_harris_tol: float = 1e-12
    lp_optimality_tol: float = 1e-9
    lp_residual_tol: float = 1e-7
    lp_refactor_interval: int = 50
    lp_max_iterations: int = 50000
    lp_degenerate_streak: int = 25

    # Equilibrium and fluid ODE
    saturation_tol: float = 1e-9
    boundary_tol: float = 1e-10
    ode_dt: float = 1e-3
    ode_record_interval: float = 0.1
    ode_max_mass_drift: float = 1e-6

    # Simulation
    warmup_fraction: float = 0.1
    max_workers: int = 1
    default_seed: int = 0

    scenario_dir: Optional[str] = None

    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="ECR_",
        case_sensitive=False,
        extra="ignore",
    )


_settings = None


def get_settings() -> Settings:
    global _settings
    if _settings is None:
        _settings = Settings()
    return _settings


def reset_settings() -> None:
    """Drop the cached settings so the next call re-reads the environment"""
    global _settings
    _settings = None
