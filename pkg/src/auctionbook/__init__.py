"""Latent/revealed order-book model for equity call auctions."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigurationError,
    DomainError,
    FitError,
    NoClearing,
    NumericalFailure,
    ParamFileError,
)
from .model_core import (  # noqa: E402
    CancellationRateParams,
    DiffusionSchedule,
    LatentBookParams,
    StationaryFitParams,
    SubmissionRateParams,
    eval_cancellation_rate,
    eval_deadline_solution,
    eval_latent_initial,
    eval_stationary_revealed,
    eval_submission_rate,
    eval_time_independent_dynamic,
)
from .pde_solver import DensityField, PriceGrid, RateModel, integrate  # noqa: E402
from .auction_engine import (  # noqa: E402
    SimulationConfig,
    TickStream,
    UpdateKernel,
    clear_stream,
    simulate_flow,
    snapshot_stream,
)
from .estimators import (  # noqa: E402
    EstimatorConfig,
    estimate_cancel_rate,
    estimate_diffusion,
    estimate_submit_flux,
    estimate_update_rate,
    fit_deadline_rate,
    infer_submission_rate,
)
from .scaling import PriceEnsemble, RegimeSegmentation, exponents, scaling_report  # noqa: E402
from .calibration import DynamicConfig, Snapshots, fit_dynamic, fit_static  # noqa: E402
