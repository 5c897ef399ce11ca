"""Command-line interface, scenario presets and grid export."""
from .grid import CSV_COLUMNS, GridResult, read_csv, run_grid, write_csv
from .main import build_parser, main, parse_config
from .presets import PRESETS, preset

__all__ = [
    "CSV_COLUMNS", "GridResult", "PRESETS", "build_parser", "main", "parse_config", "preset",
    "read_csv", "run_grid", "write_csv",
]
