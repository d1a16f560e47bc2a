"""Poisson multi-Bernoulli negative log-likelihood for probabilistic object detection."""

from pmb_nll.assignment import CostMatrix, build_cost_matrix, enumerate_all, murty_k_best, solve_optimal
from pmb_nll.density import brute_force_log_pmb, log_box_density, log_ppp_intensity, log_single_object_density
from pmb_nll.detr import compare_matchings, detr_matching_cost, mb_matching_cost_constant_scale
from pmb_nll.ppp import build_pmb
from pmb_nll.scoring import decompose, mb_nll, pmb_nll, training_loss_gradients, training_loss_mb
from pmb_nll.types import (
    PPP,
    Assignment,
    BernoulliComponent,
    BoundingBox,
    BoxDistribution,
    BoxFamily,
    ClassDistribution,
    GroundTruthObject,
    GroundTruthSet,
    IntensityComponent,
    NllDecomposition,
    NllReport,
    PmbDensity,
    PoissonIntensity,
)

__all__ = [
    "PPP",
    "Assignment",
    "BernoulliComponent",
    "BoundingBox",
    "BoxDistribution",
    "BoxFamily",
    "ClassDistribution",
    "CostMatrix",
    "GroundTruthObject",
    "GroundTruthSet",
    "IntensityComponent",
    "NllDecomposition",
    "NllReport",
    "PmbDensity",
    "PoissonIntensity",
    "brute_force_log_pmb",
    "build_cost_matrix",
    "build_pmb",
    "compare_matchings",
    "decompose",
    "detr_matching_cost",
    "enumerate_all",
    "log_box_density",
    "log_ppp_intensity",
    "log_single_object_density",
    "mb_matching_cost_constant_scale",
    "mb_nll",
    "murty_k_best",
    "pmb_nll",
    "solve_optimal",
    "training_loss_gradients",
    "training_loss_mb",
]
