"""Hierarchical test block language: parsing, compilation and evaluation."""

from .ast import (PARAM_PREFIX, Block, SearchParameter, TestAssessmentBlock, TestSequenceBlock,
                  TestStep)
from .machine import CompiledBlock, compile_block, compile_expr
from .parser import DSLError, check_assignments, parse_block, parse_expr, parse_file
from .sequences import (REQUIREMENT_IDS, SEQUENCE_IDS, ConcreteSequence, ParameterError,
                        configurations, generate_input_trace, instantiate, list_parameters,
                        load_assessment, load_sequence, resolve_values, shipped_sequences,
                        step_semantics)

__all__ = [
    "PARAM_PREFIX", "Block", "SearchParameter", "TestAssessmentBlock", "TestSequenceBlock",
    "TestStep", "CompiledBlock", "compile_block", "compile_expr", "DSLError",
    "check_assignments", "parse_block", "parse_expr", "parse_file", "REQUIREMENT_IDS", "SEQUENCE_IDS",
    "ConcreteSequence", "ParameterError", "configurations", "generate_input_trace",
    "instantiate", "list_parameters", "load_assessment", "load_sequence", "resolve_values",
    "shipped_sequences", "step_semantics",
]
