"""Learning heuristic functions that rank states for A*, GBFS and other best-first searches."""

from .domains import Plan, ProblemInstance, generate_instance, is_goal, successors
from .search import SearchConfig, SearchResult, certify_strict_optimal_efficiency, forward_search, validate_plan

__version__ = "0.1.0"
