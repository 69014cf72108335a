"""Sinkhorn Descent for Sinkhorn-divergence barycenters of discrete measures."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    BacktrackingFailed,
    MaxIterations,
    NumericalError,
    SinkhornDescentError,
    ValidationError,
)
from .measures import (  # noqa: E402
    Box,
    CostKind,
    DiscreteMeasure,
    GroundCost,
    RbfKernel,
    generate_ellipse,
    generate_gaussian,
    measure_from_image,
    median_heuristic_bandwidth,
    new_discrete_measure,
    read_measure_csv,
    write_measure_csv,
)
from .sinkhorn import (  # noqa: E402
    SinkhornConfig,
    SinkhornPotentials,
    ot_gamma,
    potential_gradient,
    sinkhorn_divergence,
    sinkhorn_map,
    solve_potentials,
    solve_symmetric_potential,
)
from .descent import (  # noqa: E402
    BarycenterProblem,
    DescentConfig,
    DescentDirection,
    DescentTrace,
    default_step_size,
    functional_gradient,
    ksbd,
    run_sd,
    sd_step,
)
from .baseline_fw import FwConfig, WeightRule, fw_linearization, run_fw  # noqa: E402
