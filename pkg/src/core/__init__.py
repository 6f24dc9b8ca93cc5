"""
Core data structures shared by every stage of the pipeline.

This package holds the motion types (skeleton, sequences, interaction pairs),
the error hierarchy, the binary container used by datasets and checkpoints,
the run configuration profiles, and the pluggable text encoder.
"""
