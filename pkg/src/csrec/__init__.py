"""Causal sequential recommendation: simulator, exact causal oracles, models and metrics."""
__version__ = "0.1.0"

from .constrained import CsrecHyper, csrec_loss, train_csrec
from .estimators import CSRecRecommender, ObservationalRecommender
from .seqrec import Hyperparams, SeqModelParams, train_observational
from .sim import Catalog, DecisionModelParams, EventSequence, ExposurePolicy, UserProfile

__all__ = [
    "CSRecRecommender", "Catalog", "CsrecHyper", "DecisionModelParams", "EventSequence", "ExposurePolicy",
    "Hyperparams", "ObservationalRecommender", "SeqModelParams", "UserProfile", "csrec_loss",
    "train_csrec", "train_observational",
]
