"""
Command-line surface: `flowcps audit|pretrain|grpo|compare --config FILE [--force] [--seed N]`.
"""

from .commands import build_parser, run

__all__ = ["build_parser", "run"]
