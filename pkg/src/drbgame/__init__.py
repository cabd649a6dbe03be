"""Small-world network formation games on lattices and geographic populations."""
from .errors import (ConsistencyError, ConvergenceError, DegenerateFitError, DRBError, InputError,
                     UndefinedCorrelationError, UnsupportedGeometryError)
from .lattice import GeoPopulation, TorusGrid
from .payoff import DRB, RoutingCost, RoutingNeg, StrategyProfile, StrategySet, make_context

__version__ = "0.1.0"
