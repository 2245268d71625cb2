"""
Settings profiles and validated run configuration
"""
