"""Consensus over probability measures by repeated barycentric averaging."""

__version__ = "0.1.0"

from .barycenter import BarycenterProblem, bar, bar_1d, bar_free_support, bar_gaussian
from .consensus import (ConsensusState, MetricsRecord, RunAborted, StopCriteria,
                        check_jensen, diameter, functional_trace, run, step)
from .errors import CapacityError, ConfigError, ConvergenceError
from .measures import (DiscreteMeasure, GaussianMeasure, Measure, mean_vector,
                       measure_from_json, measure_to_json, push_affine,
                       quadratic_functional, sample, second_moment)
from .network import (GraphSchedule, MeetingCertificate, generate_schedule, meets,
                      validate_schedule, verify_meeting_lemma)
from .transport import (SolverConfig, TransportPlan, displacement_interpolate,
                        matrix_sqrt_psd, sinkhorn, w2, w2_gaussian,
                        wp_1d, wp_discrete_exact)

__all__ = [
    "BarycenterProblem", "bar", "bar_1d", "bar_free_support", "bar_gaussian",
    "ConsensusState", "MetricsRecord", "RunAborted", "StopCriteria", "check_jensen", "diameter",
    "functional_trace", "run", "step",
    "CapacityError", "ConfigError", "ConvergenceError",
    "DiscreteMeasure", "GaussianMeasure", "Measure", "mean_vector",
    "measure_from_json", "measure_to_json", "push_affine", "quadratic_functional",
    "sample", "second_moment",
    "GraphSchedule", "MeetingCertificate", "generate_schedule", "meets",
    "validate_schedule", "verify_meeting_lemma",
    "SolverConfig", "TransportPlan", "displacement_interpolate", "matrix_sqrt_psd",
    "sinkhorn", "w2", "w2_gaussian", "wp_1d", "wp_discrete_exact",
]
