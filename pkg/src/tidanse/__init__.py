"""Topology-independent distributed adaptive node-specific signal estimation.

TI-DANSE and its GEVD-based variant for wireless acoustic sensor networks,
with the G-normalization that keeps long online runs numerically stable.
"""
__version__ = '0.1.0'

from .algorithm import EngineOptions, IterationState, NodeState, init_state, run_iteration
from .beamformers import Filter, gevd_mwf, gevd_mwf_multi, mwf
from .covariance import ScmPair, analytic_scm, batch_scm, ewma_update, normalized_ewma_update
from .errors import (DegenerateGamma, DegenerateNormalization, DisconnectedGraph, InvalidConfig,
                     NotPositiveDefinite, ShapeMismatch, SingularCovariance, TidanseError)
from .metrics import RunTraceRow, mse_d, mse_w
from .numerics import GevdResult, cholesky, gevd_pencil, hermitian_eig
from .scenario import Scenario, ScenarioConfig, SignalFrame, draw_frame, make_scenario
from .wasn import Topology, Tree, prune_tree

__all__ = [
    'EngineOptions', 'IterationState', 'NodeState', 'init_state', 'run_iteration',
    'Filter', 'gevd_mwf', 'gevd_mwf_multi', 'mwf',
    'ScmPair', 'analytic_scm', 'batch_scm', 'ewma_update', 'normalized_ewma_update',
    'DegenerateGamma', 'DegenerateNormalization', 'DisconnectedGraph', 'InvalidConfig',
    'NotPositiveDefinite', 'ShapeMismatch', 'SingularCovariance', 'TidanseError',
    'RunTraceRow', 'mse_d', 'mse_w',
    'GevdResult', 'cholesky', 'gevd_pencil', 'hermitian_eig',
    'Scenario', 'ScenarioConfig', 'SignalFrame', 'draw_frame', 'make_scenario',
    'Topology', 'Tree', 'prune_tree',
]
