"""Average age of information in line networks of preemptive memoryless servers."""

from .line_models import (
    ConfigError,
    LineNetworkConfig,
    WrongNodeCount,
    build_fake_update,
    build_two_node,
    closed_form_age,
    closed_form_node_ages,
    fake_update_node_ages,
    two_node_stationary,
)
from .shs import (
    AgeSolution,
    IndexOutOfRange,
    InvalidModel,
    NegativeSolution,
    ReducibleChain,
    ShsError,
    ShsModel,
    SingularSystem,
    StationaryDistribution,
    Transition,
    age_components,
    solve_age,
    stationary_distribution,
    validate_model,
)
from .simulator import AgePath, SimConfig, SimSummary, occupancy_fractions, replicate, run

__version__ = "0.1.0"
