"""Distributed blackbox-optimization service and algorithm toolkit."""

from . import algorithms  # registers built-in policies
from .client import (ClientSession, HttpTransport, InProcessTransport,
                     RetryPolicy, ServerHandle)
from .datastore import Datastore, Operation, OperationKind, PersistentDatastore
from .model import (AutomatedStopping, Goal, Measurement, MetadataStore,
                    MetricSpec, ObservationNoise, Study, StudySpec, StudyState,
                    Trial, TrialState, metadata_upsert, transition_trial)
from .policies import (EarlyStopDecision, EarlyStopRequest, Policy,
                       PolicySupporter, SerializableDesignerPolicy,
                       SuggestDecisions, SuggestRequest, register_policy,
                       registered_policies)
from .rest import RestServer
from .search_space import (ChildSpec, ParameterAssignment, ParameterKind,
                           ParameterSpec, ScaleKind, active_parameters,
                           lehmer_decode, sample_random, scale_to_unit,
                           subset_decode, unscale_from_unit,
                           validate_assignment)
from .service import ServerConfig, Service

__version__ = "0.1.0"
