"""
Cross-modal alignment by constrained decoupling and distribution sampling
"""

__version__ = "0.1.0"
