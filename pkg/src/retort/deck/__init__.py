"""Input deck: typed model, parser, canonical writer."""

from .balance import validate_reaction_balance
from .model import (
    BoundarySchedule, EquilibriumSpec, InitialRecord, InitialState, OutputSpec, ReactionSpec,
    Schedule, SimulationDeck, SolverSettings, Species, SpeciesRegistry, SweepSpec,
)
from .params import get_parameter, set_parameter, split_path
from .parser import check_deck, load_deck, parse_deck
from .writer import serialize_deck

__all__ = [
    "BoundarySchedule", "EquilibriumSpec", "InitialRecord", "InitialState", "OutputSpec",
    "ReactionSpec", "Schedule", "SimulationDeck", "SolverSettings", "Species", "SpeciesRegistry",
    "SweepSpec", "check_deck", "get_parameter", "set_parameter", "split_path", "load_deck", "parse_deck", "serialize_deck", "validate_reaction_balance",
]
