"""Coupled adoption/dissatisfaction and opinion dynamics over age-by-mobility communities."""

__version__ = "0.1.0"

from ._accel import backend
from .control import ControlPolicy, Kind, PolicyOutcome, Rule, allocate, apply_dissatisfaction_control, \
    apply_opinion_control, budget_sweep, compare
from .dynamics import ActiveControl, CommunityIndex, CommunityModel, SystemState, Trace, scalar_step_reference, \
    simulate, step
from .errors import AdoptDynError, InputError, ModelError
from .network import SimilarityGraph, build_similarity, in_degree_centrality, median_bandwidth, pagerank
from .pipeline import CalibratedInputs, Schema, calibrate, ingest, sample_opinion_weights
from .stability import Classification, StabilityReport, classify, find_diffused_equilibrium, r0, \
    spectral_radius, stability_certificate

__all__ = [
    "ActiveControl", "AdoptDynError", "CalibratedInputs", "Classification", "CommunityIndex", "CommunityModel",
    "ControlPolicy", "InputError", "Kind", "ModelError", "PolicyOutcome", "Rule", "Schema", "SimilarityGraph",
    "StabilityReport", "SystemState", "Trace", "allocate", "apply_dissatisfaction_control", "apply_opinion_control",
    "backend", "budget_sweep", "build_similarity", "calibrate", "classify", "compare", "find_diffused_equilibrium",
    "in_degree_centrality", "ingest", "median_bandwidth", "pagerank", "r0", "sample_opinion_weights",
    "scalar_step_reference", "simulate", "spectral_radius", "stability_certificate", "step",
]
