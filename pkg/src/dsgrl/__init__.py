"""Data-driven self-supervised graph representation learning."""
