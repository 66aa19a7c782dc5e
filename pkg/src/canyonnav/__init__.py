"""GNSS single point positioning aided by a sliding-window LiDAR map.

The library classifies per-satellite visibility against an accumulated
point-cloud map, corrects blocked pseudoranges when the reflecting surface
can be located, de-weights the rest, and solves positions by iterative
weighted least squares. A synthetic urban-canyon simulator with an exact
analytic oracle makes every stage testable without field data.
"""

from .frames import (
    EcefPosition,
    EnuPosition,
    FrameTransform,
    GeodeticPosition,
    SatelliteDirection,
    ecef_to_geodetic,
    enu_transform_at,
    geodetic_to_ecef,
    satellite_direction,
)
from .measmodel import (
    AtmosphereContext,
    SatelliteObservation,
    WeightParams,
    apply_corrections,
    ionospheric_delay,
    observation_weight,
    tropospheric_delay,
    variance_factor,
)
from .nlos import (
    CNLOS,
    FNLOS,
    LOS,
    DetectionParams,
    VisibilityVerdict,
    classify_and_correct,
    classify_visibility,
    find_reflector,
    nlos_delay,
    ray_step,
)
from .scenesim import (
    BuildingFace,
    LidarModel,
    SatelliteSpec,
    SceneSpec,
    oracle_reflection,
    oracle_visibility,
    sample_pointcloud,
    synthesize_observations,
)
from .solver import (
    ReceiverSolution,
    SolverConfig,
    dilution_of_precision,
    jacobian_row,
    predict_pseudorange,
    wls_solve,
)
from .swm import (
    Calibration,
    PointCloudFrame,
    RegistrationPose,
    SlidingWindowMap,
    SwmConfig,
    build_swm,
    query_neighbors,
)

__version__ = "0.1.0"
