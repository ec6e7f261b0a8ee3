"""Farm-household microsimulation of fertilizer subsidy policies."""

__version__ = "0.1.0"

from .core import (Activity, BehavioralFunction, Eligibility, Household, Model, PriceSystem, Product,
                   Solution, SubsidyPolicy)

__all__ = ["Activity", "BehavioralFunction", "Eligibility", "Household", "Model", "PriceSystem",
           "Product", "Solution", "SubsidyPolicy", "__version__"]
