"""
Generation metrics, reconstruction errors and latent diagnostics.
"""
