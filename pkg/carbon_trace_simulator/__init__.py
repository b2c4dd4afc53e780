"""
Carbon Trace Simulator Package
"""

__version__ = "0.1.0"
