"""QoS-aware service-request broker.

Requests are stored and deduplicated, mapped to registered service
descriptors through an inverted keyword index, filtered by relevance and
finally ranked by a weighted priority score that folds in declared QoS.
"""

from .errors import BrokerError
from .filtering import FilterCriteria, filter_candidates
from .mapper import RegistryIndex, map_request, relevance
from .metrics import MetricsCollector, rate, stage_aggregate
from .model import (
    Candidate,
    PriorityScore,
    QosBand,
    ServiceDescriptor,
    ServiceRequest,
    StageTrace,
    normalize,
)
from .selector import (
    SelectionResult,
    SelectionStrategy,
    Weights,
    score,
    select_top,
    select_with_strategy,
)
from .store import RequestState, RequestStore, StoredRequest

__all__ = [
    "BrokerError",
    "Candidate",
    "FilterCriteria",
    "MetricsCollector",
    "PriorityScore",
    "QosBand",
    "RegistryIndex",
    "RequestState",
    "RequestStore",
    "SelectionResult",
    "SelectionStrategy",
    "ServiceDescriptor",
    "ServiceRequest",
    "StageTrace",
    "StoredRequest",
    "Weights",
    "filter_candidates",
    "map_request",
    "normalize",
    "rate",
    "relevance",
    "score",
    "select_top",
    "select_with_strategy",
    "stage_aggregate",
]
