"""Discrete acoustic-state vocabulary learning for hive embedding streams."""

__version__ = "0.1.0"
