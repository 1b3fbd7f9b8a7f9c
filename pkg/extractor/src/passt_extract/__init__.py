"""Frame-level embedding extraction from raw hive audio into BEEV1 files."""

__version__ = "0.1.0"
