import os

from pydantic_settings import BaseSettings, SettingsConfigDict
from pydantic import Field


class Settings(BaseSettings):
    # --- Pydantic v2 settings config ---
    model_config = SettingsConfigDict(
        env_file=".env",
        case_sensitive=False,
        extra="ignore",  # so unknown env vars won't crash a run
    )

    app_name: str = os.getenv("APP_NAME", "Ricci Flow Verifier")
    env: str = Field(default="dev", alias="ENV")
    log_level: str = Field(default="INFO", alias="LOG_LEVEL")

    # Tolerances
    default_tolerance: float = Field(default=1e-6, alias="DEFAULT_TOLERANCE")
    mesh_tolerance: float = Field(default=1e-9, alias="MESH_TOLERANCE")

    # Geodesics / transport
    path_cap: int = Field(default=64, alias="PATH_CAP")
    tau_nodes: int = Field(default=9, alias="TAU_NODES")
    sigma_nodes: int = Field(default=33, alias="SIGMA_NODES")
    simplex_max_pivots: int = Field(default=100_000, alias="SIMPLEX_MAX_PIVOTS")

    # Charts
    fd_space_step: float = Field(default=1e-3, alias="FD_SPACE_STEP")
    fd_time_step: float = Field(default=1e-4, alias="FD_TIME_STEP")
    ode_step: float = Field(default=1e-2, alias="ODE_STEP")

    # Generators
    rk4_substeps: int = Field(default=20, alias="RK4_SUBSTEPS")

    # D_I distance
    ddi_weight_sweep: int = Field(default=16, alias="DDI_WEIGHT_SWEEP")
    ddi_rounds: int = Field(default=25, alias="DDI_ROUNDS")
    ddi_vertex_limit: int = Field(default=16, alias="DDI_VERTEX_LIMIT")   # n * n~ up to which every coupling vertex is tried

    # Runner
    threads: int = Field(default=1, alias="THREADS")
    report_schema_version: str = Field(default="1.0", alias="REPORT_SCHEMA_VERSION")

    @property
    def effective_log_level(self) -> str:
        """Quieter default outside of dev runs."""
        if self.env.lower() in {"dev", "local", "test"}:
            return self.log_level.upper()
        return "WARNING"


settings = Settings()
