"""Randomised comparison of analytic BPTT gradients against finite differences."""

from __future__ import annotations

from dataclasses import dataclass

from .lstm import (
    NetworkArchitecture,
    finite_difference_gradients,
    init_network,
    max_relative_error,
    sample_loss_gradients,
)
from .numkernel import SeededRng

GRADCHECK_TOLERANCE = 1e-5


@dataclass(frozen=True)
class GradCheckResult:
    hidden_dims: tuple[int, ...]
    window: int
    features: int
    max_rel_error: float


def random_gradient_checks(
    n_nets: int = 20,
    seed: int = 0,
    eps: float = 1e-5,
    max_layers: int = 3,
    max_hidden: int = 8,
    max_window: int = 6,
    max_features: int = 5,
) -> list[GradCheckResult]:
    """Draw ``n_nets`` random small networks and check each on one random window.

    Layer count, widths, window length and feature count are drawn uniformly
    from ``1..max_*``; the window and target are standard normal.
    """
    rng = SeededRng(seed)

    def pick(hi: int) -> int:
        return 1 + int(rng.uniform() * hi)

    results = []
    for _ in range(n_nets):
        hidden = tuple(pick(max_hidden) for _ in range(pick(max_layers)))
        B, F = pick(max_window), pick(max_features)
        net = init_network(NetworkArchitecture(F, hidden), rng)
        X = rng.normal_array(B * F).reshape(B, F)
        y = rng.normal()
        _, analytic = sample_loss_gradients(net, X, y)
        numeric = finite_difference_gradients(net, X, y, eps)
        results.append(GradCheckResult(hidden, B, F, max_relative_error(analytic, numeric)))
    return results
