"""Random walks in random environment, their branching structure and Brownian snakes."""
from . import branching, diffusion, environment, snake, stats, superprocess, walk
from .config import DEFAULT_SEED, THRESHOLDS, replica_rng
from .errors import (EnvironmentExhausted, IncompletePathError, ParameterError, ResourceError,
                     SnakelabError)

__version__ = "0.1.0"
