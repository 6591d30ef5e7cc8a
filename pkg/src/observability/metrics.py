"""
Custom metrics definitions for the solvers and the convergence study.
"""

from opentelemetry import metrics

meter = metrics.get_meter("pflow.metrics")

# Counter: Time steps taken, by solver
SOLVER_STEP_COUNTER = meter.create_counter(
    "pflow_solver_steps_total",
    description="Total number of time steps taken",
    unit="1"
)

# Histogram: Wall time per step
STEP_LATENCY = meter.create_histogram(
    "pflow_step_latency_seconds",
    description="Wall time of one solver step",
    unit="s"
)

# Counter: Reference cell divergence solves
CELL_SOLVE_COUNTER = meter.create_counter(
    "pflow_cell_solves_total",
    description="Total number of reference cell divergence solves",
    unit="1"
)

# Counter: Study points finished, by status
STUDY_POINT_COUNTER = meter.create_counter(
    "pflow_study_points_total",
    description="Parameter points completed by the study runner",
    unit="1"
)

# Counter: Runs restarted with a halved time step
CFL_RETRY_COUNTER = meter.create_counter(
    "pflow_cfl_retries_total",
    description="Runs retried after a CFL violation",
    unit="1"
)
