"""
Noise schedules, the forward process, the denoising loss and DDIM sampling.
"""
