"""Solver library for monomfg.

The grid, Hamiltonian, envelope, operator, solver and continuation modules
are usable on their own; `services.runs` wires them together for the CLI.
"""
