"""
Normalization GAN: models, hinge losses, patch sampling, training and tiled inference
"""
