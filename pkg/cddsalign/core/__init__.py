"""
Errors, run manifests and run directories
"""
