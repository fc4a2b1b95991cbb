"""Knitting instruction toolchain: map DSL, machine compiler, renderer, datasets and img2prog networks."""
from .instructions import CODES, Instruction, InstructionMap, mirror_to_back, parse_map, serialize_map
from .machine import compile_map, repair, simulate, validate

__all__ = ["CODES", "Instruction", "InstructionMap", "compile_map", "mirror_to_back", "parse_map",
           "repair", "serialize_map", "simulate", "validate"]
