"""Energy management of a subway station: battery, ventilation and PM10.

Three controllers share one discretized model: rolling-horizon MPC on a
point forecast, SDP with offline marginals (SDPO) and SDP on the state
augmented with the last braking power (SDPA).
"""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    AirParams,
    BatteryParams,
    Control,
    EconomicParams,
    NoiseVector,
    State,
    StationModel,
    TimeGrid,
    VentilationModes,
    admissible,
    dynamics,
    import_power,
    reference_policy,
    stage_cost,
    step_pm10,
    step_soc,
)
from .calibration import default_model, default_profiles  # noqa: E402

__all__ = [
    "AirParams",
    "BatteryParams",
    "Control",
    "EconomicParams",
    "NoiseVector",
    "State",
    "StationModel",
    "TimeGrid",
    "VentilationModes",
    "admissible",
    "default_model",
    "default_profiles",
    "dynamics",
    "import_power",
    "reference_policy",
    "stage_cost",
    "step_pm10",
    "step_soc",
]
