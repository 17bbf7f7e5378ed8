"""Noise-driven wave fields, their correlations, and the identities linking them to propagators."""
