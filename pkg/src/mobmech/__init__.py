"""Budget-aware assignment of travelers to capacitated mobility services.

Maximizes worst-case revenue over a finite set of valuation scenarios,
prices assignments from LP dual variables, and verifies truthfulness,
voluntary participation and budget fairness by brute force.
"""

from .model import (
    Assignment,
    MarketInstance,
    ValuationProfile,
    Violation,
    is_feasible,
    revenue,
    utility,
    validate,
)
from .mechanism import (
    DualCertificate,
    MechanismError,
    MechanismTables,
    PricingOutcome,
    build_tables,
    run_pipeline,
)
from .verify import PropertyReport

__version__ = "0.1.0"

__all__ = [
    "Assignment",
    "DualCertificate",
    "MarketInstance",
    "MechanismError",
    "MechanismTables",
    "PricingOutcome",
    "PropertyReport",
    "ValuationProfile",
    "Violation",
    "build_tables",
    "is_feasible",
    "revenue",
    "run_pipeline",
    "utility",
    "validate",
]
