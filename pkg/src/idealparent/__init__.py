"""Continuous Bayesian network structure learning with ideal-parent screening."""

from .cpd import bic_score, fit_family, fit_graph, fit_linear_gaussian, fit_sigmoid
from .hidden import agglomerate_clusters, insert_hidden_variable, optimal_hidden_profile
from .ideal import c1, c2, distorted_similarity, ideal_profile, screening_scores
from .io import load_csv, load_network, save_csv, save_network, to_dot
from .metrics import RunReport, evaluate_run, network_loglik
from .model import (CPDKind, Dataset, FamilyParams, MoveKind, NetworkGraph, Node, SearchMove,
                    is_legal_move, topological_order)
from .search import SearchConfig, greedy_search, screen_candidates
from .sem import PosteriorMoments, mean_field_e_step, structural_em
from .synth import make_synthetic_suite, sample_network

__version__ = "0.1.0"
