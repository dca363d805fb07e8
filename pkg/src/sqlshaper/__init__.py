"""Cost-targeted SQL workload generation.

Templates are drafted by a language model provider, profiled against a cost
oracle, refined toward under-covered cost intervals, and finally instantiated
by Bayesian optimization until the workload's cost histogram matches a target.
"""

from .distribution import BenchmarkSpec, CostHistogram, CostIntervals, build_target, wasserstein
from .model import SqlQuery, SqlTemplate, TemplateSpec, ValueDomain, instantiate

__all__ = [
    "BenchmarkSpec", "CostHistogram", "CostIntervals", "SqlQuery", "SqlTemplate", "TemplateSpec",
    "ValueDomain", "build_target", "instantiate", "wasserstein",
]

__version__ = "0.1.0"
