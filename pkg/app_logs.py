#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Logging and console helpers.

Every runnable entry point calls setup_logging() once; library modules only
use logging.getLogger(__name__). The colour helpers are for the lines a user
is meant to read on the terminal.
"""

import logging
import sys

from colorama import init, Fore, Style

init()  # Initialize colorama

LOG_FILE = "cqed.log"
LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"


def setup_logging(log_file: str = LOG_FILE, level: int = logging.INFO, console: bool = True):
    """
    Configure the root logger with a file handler and (optionally) a stream
    handler. Safe to call more than once: later calls replace the handlers.
    """
    handlers = [logging.FileHandler(log_file)]
    if console:
        handlers.append(logging.StreamHandler())
    logging.basicConfig(level=level, format=LOG_FORMAT, handlers=handlers, force=True)


def progress_enabled(quiet: bool = False) -> bool:
    """tqdm bars only when a person is watching."""
    return not quiet and sys.stderr.isatty()


def info(message: str):
    print(f"{Fore.CYAN}[INFO] {message}{Style.RESET_ALL}")


def ok(message: str):
    print(f"{Fore.GREEN}[OK] {message}{Style.RESET_ALL}")


def warn(message: str):
    print(f"{Fore.YELLOW}[WARN] {message}{Style.RESET_ALL}")


def fail(message: str):
    print(f"{Fore.RED}[ERROR] {message}{Style.RESET_ALL}", file=sys.stderr)
