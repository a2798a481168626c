"""
Minimal numpy tensor core: differentiable ops, layers, spectral norm, Adam, checkpoints
"""
