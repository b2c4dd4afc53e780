#!/usr/bin/env python3
"""
Entry point for `python -m carbon_trace_simulator`.
"""

from .carbon_trace_simulator import app

if __name__ == "__main__":
    app()
