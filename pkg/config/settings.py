"""
Centralized configuration management using Pydantic Settings.
Loads solver and study configuration from environment variables with validation.
"""

from pathlib import Path
from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class GridSettings(BaseSettings):
    """Uniform Grid Configuration"""

    min_nodes: int = Field(default=8, description="Minimum node count per axis")
    obstacle_resolution: int = Field(default=8, description="Required nodes per obstacle size (h <= eps / N)")

    @field_validator('min_nodes', 'obstacle_resolution')
    @classmethod
    def validate_positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("Grid counts must be positive")
        return v

    model_config = SettingsConfigDict(env_prefix="")


class BiotSavartSettings(BaseSettings):
    """Biot-Savart Kernel Configuration"""

    support_tolerance: float = Field(default=1e-8, description="Relative magnitude treated as outside the support")
    direct_chunk_size: int = Field(default=2048, description="Evaluation points per direct-quadrature chunk")
    direct_workers: int = Field(default=1, description="Threads for direct quadrature")
    linf_ratio_ceiling: float = Field(default=1.0, description="Ceiling for |u|_inf / (|w|_inf |w|_1)^(1/2)")
    cz_ratio_ceiling: float = Field(default=5.0, description="Ceiling for |grad u|_p / |w|_p")

    model_config = SettingsConfigDict(env_prefix="")


class CorrectorSettings(BaseSettings):
    """Reference Cell Divergence Solver Configuration"""

    cell_resolution: int = Field(default=128, description="Cells per axis on the reference cell (-2,2)^2")
    solver_tolerance: float = Field(default=1e-8, description="Relative algebraic residual for div h = f")
    mean_tolerance: float = Field(default=1e-8, description="Relative mean allowed for a cell right-hand side")
    assembly_mean_tolerance: float = Field(default=5e-2, description="Relative mean defect tolerated before projection")
    mean_defect_warning: float = Field(default=1e-3, description="Relative mean defect logged as a warning when projected")
    batch_size: int = Field(default=64, description="Right-hand sides per factorized solve")
    cell_workers: int = Field(default=1, description="Threads solving batches against the shared factorization")
    ensemble_size: int = Field(default=20, description="Random samples for constant estimation")
    seed: int = Field(default=20240101, description="Seed for constant estimation ensembles")

    @field_validator('ensemble_size')
    @classmethod
    def validate_ensemble(cls, v: int) -> int:
        if v < 20:
            raise ValueError("Constant estimation needs at least 20 samples")
        return v

    model_config = SettingsConfigDict(env_prefix="")


class InitialDataSettings(BaseSettings):
    """Initial Data Construction Configuration"""

    boundary_samples: int = Field(default=256, description="Boundary points per obstacle for tangency checks")
    quadrature_tolerance: float = Field(default=1e-3, description="Relative tolerance for tangency and circulation")
    source_nodes: int = Field(default=64, description="Nodes per axis sampling the initial vorticity for direct sums")
    capacitance_condition: float = Field(default=1e12, description="Condition number above which a constraint system counts as singular")
    dense_ring_limit: int = Field(default=4000, description="Largest boundary ring solved with a dense factorization")

    model_config = SettingsConfigDict(env_prefix="")


class EulerSettings(BaseSettings):
    """Full-Plane Euler Solver Configuration"""

    euler_cfl: float = Field(default=0.5, description="Advective CFL number")
    interpolation_order: int = Field(default=3, description="Spline order for semi-Lagrangian interpolation")
    drift_l1: float = Field(default=1e-3, description="Allowed relative L1 drift of vorticity")
    drift_l2: float = Field(default=5e-3, description="Allowed relative L2 drift of vorticity")
    drift_linf: float = Field(default=1e-2, description="Allowed relative Linf drift of vorticity")

    @field_validator('interpolation_order')
    @classmethod
    def validate_order(cls, v: int) -> int:
        if v not in (1, 3, 5):
            raise ValueError("Interpolation order must be 1, 3 or 5")
        return v

    model_config = SettingsConfigDict(env_prefix="")


class NSSettings(BaseSettings):
    """Penalized Navier-Stokes Solver Configuration"""

    ns_cfl: float = Field(default=0.5, description="Advective CFL number")
    diffusion_number: float = Field(default=0.25, description="Bound on nu * dt / h^2")
    energy_tolerance: float = Field(default=1e-3, description="Relative energy growth flagged per step")
    projection_tolerance: float = Field(default=1e-8, description="Bound on |div u| / |grad u| after projection")

    model_config = SettingsConfigDict(env_prefix="")


class StudySettings(BaseSettings):
    """Convergence Study Configuration"""

    snapshots: int = Field(default=50, description="Snapshots per run (sup over time is taken on these)")
    max_workers: int = Field(default=2, description="Parameter points run concurrently")
    calibration_safety: float = Field(default=0.9, description="Safety factor applied to the calibrated A")
    cfl_retries: int = Field(default=3, description="Attempts with halved dt on CFL failure")
    box_factor: float = Field(default=4.0, description="Periodic box side over obstacle-region diameter")

    @field_validator('calibration_safety')
    @classmethod
    def validate_safety(cls, v: float) -> float:
        if not 0.0 < v <= 1.0:
            raise ValueError("Safety factor must be in (0, 1]")
        return v

    model_config = SettingsConfigDict(env_prefix="")


class ObservabilitySettings(BaseSettings):
    """Observability and Monitoring Configuration"""

    service_name: str = Field(default="pflow-lab", description="Service name reported to telemetry")
    enable_tracing: bool = Field(default=False, description="Enable OpenTelemetry tracing")
    enable_metrics: bool = Field(default=False, description="Enable metrics collection")
    metrics_export_interval_ms: int = Field(default=60000, description="Metric export interval")
    log_level: str = Field(default="INFO", description="Logging level")

    model_config = SettingsConfigDict(env_prefix="")


class StorageSettings(BaseSettings):
    """Storage Configuration"""

    output_dir: Path = Field(default=Path("runs"), description="Directory for CSV, snapshots and summaries")

    model_config = SettingsConfigDict(env_prefix="")


class Settings(BaseSettings):
    """Master Settings Container"""

    grid: GridSettings = Field(default_factory=GridSettings)
    biot_savart: BiotSavartSettings = Field(default_factory=BiotSavartSettings)
    corrector: CorrectorSettings = Field(default_factory=CorrectorSettings)
    initial_data: InitialDataSettings = Field(default_factory=InitialDataSettings)
    euler: EulerSettings = Field(default_factory=EulerSettings)
    ns: NSSettings = Field(default_factory=NSSettings)
    study: StudySettings = Field(default_factory=StudySettings)
    observability: ObservabilitySettings = Field(default_factory=ObservabilitySettings)
    storage: StorageSettings = Field(default_factory=StorageSettings)

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore"
    )


# Global settings instance
settings = Settings()
