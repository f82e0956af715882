"""Tests for :mod:`latent_fda`."""
