"""Predictive UAV offloading for overloaded cellular base stations."""

from uavsim.channel import ChannelParams, LinkBudget, Region, SpatialPoint
from uavsim.contract import ContractMenu, EconomicParams, UavProfile, build_menu
from uavsim.learning import LearningConfig, RecordStream, TrafficDemandEstimator
from uavsim.mixture import GaussianMixtureEM, MixtureModel, WeightedGaussianMixture
from uavsim.simulation import Scenario, run_simulation

__version__ = "0.1.0"

__all__ = [
    "ChannelParams", "ContractMenu", "EconomicParams", "GaussianMixtureEM", "LearningConfig",
    "LinkBudget", "MixtureModel", "RecordStream", "Region", "Scenario", "SpatialPoint",
    "TrafficDemandEstimator", "UavProfile", "WeightedGaussianMixture", "build_menu",
    "run_simulation",
]
