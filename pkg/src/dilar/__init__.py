"""Dissipative latent residual grey-box identification."""
