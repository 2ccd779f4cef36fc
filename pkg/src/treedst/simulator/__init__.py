"""Grammar-based dialog simulator."""
from .grammar import (
    Grammar,
    GrammarError,
    TemplateError,
    generate_system_act,
    grammar_from_dict,
    load_grammar,
    render_template,
    sample_initial_state,
)
from .patterns import match_pattern, parse_pattern
from .simulate import (
    Conversation,
    DialogStack,
    FlowFilter,
    SimulationError,
    Turn,
    filter_flow,
    simulate_conversation,
    simulate_corpus,
)

__all__ = [
    "Conversation",
    "DialogStack",
    "FlowFilter",
    "Grammar",
    "GrammarError",
    "SimulationError",
    "TemplateError",
    "Turn",
    "filter_flow",
    "generate_system_act",
    "grammar_from_dict",
    "load_grammar",
    "match_pattern",
    "parse_pattern",
    "render_template",
    "sample_initial_state",
    "simulate_conversation",
    "simulate_corpus",
]
