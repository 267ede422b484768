"""Two players, two private friend lists, one mutual friend: a framework for
the symmetric collaborative dialogue game.

Provides scenario generation, a rule-based agent, graph-grounded neural agents
trained with a built-in autodiff engine, a session engine with human-like
pacing, corpus metrics, and a live chat service.
"""

__version__ = "0.1.0"

from .schema import Schema, Entity, SurfaceFormStore, load_schema, default_schema
from .scenario import Scenario, KB, generate_scenario

__all__ = [
    "Schema",
    "Entity",
    "SurfaceFormStore",
    "load_schema",
    "default_schema",
    "Scenario",
    "KB",
    "generate_scenario",
    "__version__",
]
