"""Hierarchical multi-agent misinformation detection with pluggable agent backends."""

from .aggregation import Vote, inherit_reason, majority_margin, weighted_vote
from .engine import Engine, assign_profiles, make_engine
from .model import Hyperparameters, Instance, Judgment, Profile
from .routing import route_inference
from .training import forward_pass, targeted_correction, train

__all__ = [
    "Engine",
    "Hyperparameters",
    "Instance",
    "Judgment",
    "Profile",
    "Vote",
    "assign_profiles",
    "forward_pass",
    "inherit_reason",
    "majority_margin",
    "make_engine",
    "route_inference",
    "targeted_correction",
    "train",
    "weighted_vote",
]
