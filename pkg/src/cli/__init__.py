"""
Command-line verbs: synth, train-vae, train-denoiser, sample, eval, plot.
"""
