"""
Synthetic interaction data and dataset files.
"""
