"""
Skip-connected AdaLN-zero transformer denoiser over latent token sequences.
"""
