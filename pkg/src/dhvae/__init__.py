"""
Disentangled hierarchical VAE: posteriors, model, losses and checkpoints.
"""
