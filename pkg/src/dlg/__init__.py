"""A small auto-parallelizing compiler for a Julia-flavored array language."""

__version__ = "0.1.0"
