"""Stereo-vision ocean wave reconstruction toolkit.

Field containers and file format, linear-wave oracles, nonlinear surface
kinematics, a regularized potential-flow subsurface solver, deterministic
stereo-matching operators, wave spectra and error metrics, and an occlusion
robustness harness. See the README for the CLI entry points.
"""

from .backend import backend_name
from .errors import (
    AllMasked,
    ConfigError,
    DegenerateGeometry,
    DimMismatch,
    DispersionViolation,
    EmptyMask,
    FormatError,
    IndexTooSmall,
    NegativeDisparity,
    NoPeak,
    NonConvergence,
    PositiveDepth,
    SingularSystem,
    TooShort,
    WaveHydroError,
)
from .fields import (
    Grid2D,
    ScalarField,
    ScalarFieldSeries,
    Tensor3,
    VectorField3,
    backward_time_derivative,
    central_gradient,
    fourier_time_integral,
)
from .geometry import (
    CameraIntrinsics,
    PlanePose,
    StereoRig,
    fit_plane,
    project_eta,
    read_rig,
    to_global,
    triangulate,
    write_rig,
)
from .kinematics import KinematicsConfig, SurfaceKinematics, surface_potential, surface_velocity
from .metrics import ErrorMetrics, disparity_errors, field_errors
from .occlusion import OcclusionSpec, SweepResult, build_wave_scene, make_mask, occluded_sweep
from .potential import (
    PotentialBasis,
    PotentialCoefficients,
    evaluate_velocity,
    fit_coefficients,
    read_coefficients,
    streamlines,
    write_coefficients,
)
from .spectra import DirectionalSpectrum, Psd, WaveStats, compute_psd, directional_spectrum, wave_stats
from .stereo_ops import (
    CorrelationVolume,
    DisparityMap,
    FeatureMap,
    FiLMParams,
    LossWeights,
    PipelineConfig,
    TemporalFusionConfig,
    attention_refine,
    classical_block_match,
    correlate_1d,
    extract_features,
    film_modulate,
    multi_scale_pipeline,
    soft_disparity,
    temporal_fuse,
    weighted_l1_loss,
)
from .synth import (
    GRAVITY,
    SeaStateSpec,
    WaveComponent,
    analytic_subsurface_velocity,
    analytic_surface_velocity,
    bandlimited_texture,
    load_preset,
    sea_state_components,
    synth_elevation,
    synth_stereo_pair,
)
from .wfs_io import read_field, read_scalar_field, write_field, write_scalar_field

__version__ = "0.1.0"
