"""Certifiable robustness of PPR-propagation classifiers under structure
attacks, and budgeted immunization of node pairs / nodes against them."""

__version__ = "0.1.0"

from .certify import (
    BudgetRule,
    CertificationResult,
    ImmuneMask,
    PerturbationScenario,
    brute_force_worst_margin,
    certify_graph,
    margin,
    worst_case_margin,
    worst_margin_all_classes,
)
from .graph import Graph, PerturbationDelta, apply_delta, karate, karate_labels, load_edge_list
from .gradients import MetaGradient, finite_diff_check, margin_adj_gradient, meta_gradient_edge, meta_gradient_node
from .immunize import ImmunizationRun, advimmune_edge, advimmune_node, robustness_gain, total_worst_margin
from .logits import FeatureMatrix, Logits, load_logits, reference_classes, train_linear_logits
from .ppr import PPRContext, ppr_matrix, ppr_row, value_vector

__all__ = [
    "BudgetRule",
    "CertificationResult",
    "FeatureMatrix",
    "Graph",
    "ImmuneMask",
    "ImmunizationRun",
    "Logits",
    "MetaGradient",
    "PPRContext",
    "PerturbationDelta",
    "PerturbationScenario",
    "advimmune_edge",
    "advimmune_node",
    "apply_delta",
    "brute_force_worst_margin",
    "certify_graph",
    "finite_diff_check",
    "karate",
    "karate_labels",
    "load_edge_list",
    "load_logits",
    "margin",
    "margin_adj_gradient",
    "meta_gradient_edge",
    "meta_gradient_node",
    "ppr_matrix",
    "ppr_row",
    "reference_classes",
    "robustness_gain",
    "total_worst_margin",
    "train_linear_logits",
    "value_vector",
    "worst_case_margin",
    "worst_margin_all_classes",
]
