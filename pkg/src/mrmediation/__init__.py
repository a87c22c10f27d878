"""Multiply robust estimation of natural direct and indirect effects."""

from importlib import resources

__version__ = "0.1.0"

from .data import ColumnSchema, EstimateReport, MediationDataset, load_csv, write_csv  # noqa: E402
from .design import DesignSpec, NuisanceSpecs, main_effects_specs, saturated_specs  # noqa: E402
from .errors import EXIT_CODES, MediationError  # noqa: E402
from .estimators import (  # noqa: E402
    delta_doubly,
    effect,
    theta_doubly,
    theta_em,
    theta_triply,
    theta_ye,
    theta_ym,
)
from .inference import bootstrap, effect_reports, eif_values, sandwich_variance  # noqa: E402
from .nuisance import fit_nuisances  # noqa: E402
from .sensitivity import make_grid, sensitivity_curve, theta_doubly_sens  # noqa: E402
from .simulation import ScenarioConfig, run_mc, true_effects  # noqa: E402
from .stabilized import fit_dag_nuisances, theta_dag  # noqa: E402


def resource_path(name: str):
    """Path of a bundled file, e.g. ``configs/table1.json`` or ``data/example_s3.csv``."""
    return resources.files(__name__).joinpath(name)


__all__ = [
    "ColumnSchema", "DesignSpec", "EXIT_CODES", "EstimateReport", "MediationDataset", "MediationError",
    "NuisanceSpecs", "ScenarioConfig", "bootstrap", "delta_doubly", "effect", "effect_reports", "eif_values",
    "fit_dag_nuisances", "fit_nuisances", "load_csv", "main_effects_specs", "make_grid", "resource_path",
    "run_mc", "sandwich_variance", "saturated_specs", "sensitivity_curve", "theta_dag", "theta_doubly",
    "theta_doubly_sens", "theta_em", "theta_triply", "theta_ye", "theta_ym", "true_effects", "write_csv",
]
