"""Lipschitz-constrained networks with certified robustness."""

from ._lipcert import (
    Model,
    certify_logits_naive,
    certify_logits_tight,
    orthogonalize,
    two_moons,
)

__all__ = ["Model", "certify_logits_naive", "certify_logits_tight", "orthogonalize", "two_moons"]
