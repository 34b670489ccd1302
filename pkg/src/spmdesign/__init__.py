"""Optimal input design and parameter estimation for a single-particle
lithium-ion cell model."""

from .config import (
    DesignConfig,
    EstimationConfig,
    ModelConfig,
    PackageConfig,
    StudyConfig,
    collection_design_config,
    concatenated_design_config,
    load_config,
)
from .data_io import (
    ReplayDataSource,
    VirtualDataSource,
    generate_virtual_data,
    ingest_measurements,
    write_measurement_csv,
)
from .design import (
    DesignRecord,
    design_step,
    first_collection_input,
    run_collection_design,
    run_concatenated_design,
    stopping_criterion,
)
from .estimation import (
    DataBlock,
    DataSet,
    EstimationResult,
    estimate,
    hessian_conditioning,
    residuals,
    restart_study,
)
from .experiments import ExperimentConfig, run_test, synthesize_measurements
from .ocv import (
    boundary_flux,
    electrode_potential,
    exchange_current,
    rk_ocv,
    rk_ocv_integral,
)
from .parameters import (
    CellParameters,
    ElectrodeConstants,
    MU_LOWER,
    MU_UPPER,
    ScaledParameterVector,
    default_cell,
    scale_parameters,
    truth_mu,
    unscale_parameters,
)
from .profiles import CurrentProfile, InputArray, VoltageTrace, profile_l2_distance
from .sensitivity import (
    InformationMatrix,
    SensitivityBundle,
    d_criterion,
    design_objective,
    information_matrix,
    penalized_objective,
    sensitivities,
)
from .simulate import CellModel, default_model, initial_cathode_soc, simulate

__version__ = "0.1.0"
