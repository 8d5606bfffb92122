"""Video-diffusion physical-law laboratory."""
