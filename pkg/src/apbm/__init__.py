"""Neural-augmented physics models filtered by a cubature Kalman filter."""

from .augment import (
    Additive,
    ApbmConfig,
    Combiner,
    ReplaceComponents,
    anchor_theta_bar,
    apbm_step,
    augmented_observation,
    build_augmented_model,
    initial_belief,
    make_config,
)
from .filtercore import (
    CubaturePointSet,
    GaussianBelief,
    StateSpaceModel,
    cholesky,
    cubature_points,
    predict,
    propagate,
    update,
    wrap_angle,
)
from .harness import (
    ExperimentConfig,
    MetricSeries,
    RunRecord,
    compute_metrics,
    emit_plots,
    rmse_curve,
    run_experiment,
    run_monte_carlo,
    weight_variance_curve,
)
from .mlp import MlpParams, MlpSpec, forward, forward_batch, pack, param_count, unpack
from .systems import (
    LorenzConfig,
    SimTruth,
    TrackingConfig,
    ct_matrix,
    ct_rotation,
    cv_model,
    lorenz_classical_config,
    lorenz_deriv,
    lorenz_paper_config,
    lorenz_simulate,
    rss_bearing_measure,
    tracking_simulate,
)

__all__ = [name for name in dir() if not name.startswith("_")]
