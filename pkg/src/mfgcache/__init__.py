"""Mean-field game cache placement for fog radio access networks.

Modules
-------
model       catalog, Zipf popularity, request generation, cost constants
radio       F-AP lattice, users, path loss, SINR rates, OU fading
cost        cache dynamics, delivery cases, delay and fronthaul load
solver      HJB / FPK finite-difference solvers and the Picard fixed point
policies    mean-field feedback policy and the MPC, RC, LRU baselines
simulator   slotted multi-F-AP simulation
experiments IFD sweep and time-variant comparison drivers
cli         ``mfgcache`` command-line entry point
"""

__version__ = "0.1.0"

from .model import CostParams, ZipfPopularity, generate_requests, zipf_probabilities
from .radio import Topology, build_topology, rate_matrix, transmission_rate
from .solver import Grid, MFGSolution, NoConvergenceError, SolverConfig, solve_mfg
from .policies import MFGPolicy, LRUCache, mpc_policy, rc_policy
from .simulator import World, simulate
from .config import ConfigError, ExperimentConfig

__all__ = [
    "CostParams", "ZipfPopularity", "generate_requests", "zipf_probabilities",
    "Topology", "build_topology", "rate_matrix", "transmission_rate",
    "Grid", "MFGSolution", "NoConvergenceError", "SolverConfig", "solve_mfg",
    "MFGPolicy", "LRUCache", "mpc_policy", "rc_policy", "World", "simulate",
    "ConfigError", "ExperimentConfig",
]
