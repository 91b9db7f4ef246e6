"""Shared helpers: random instances for solver and tuning tests."""

import numpy as np
import pytest

from spatweedie.graph import build_graph
from spatweedie.optimizer import ObservationTable
from spatweedie.tweedie import sample_cp, theta_to_mean


def gnp_graph(rng, n, edge_prob=0.3, block_count=None):
    """Erdos-Renyi style labelled graph, optionally with random blocks."""
    labels = [f"v{i:03d}" for i in range(n)]
    edges = [
        (labels[i], labels[j])
        for i in range(n)
        for j in range(i + 1, n)
        if rng.random() < edge_prob
    ]
    block_of = None
    if block_count:
        block_of = {lab: f"b{rng.integers(0, block_count)}" for lab in labels}
    return build_graph(edges, labels, block_of=block_of)


def make_observations(rng, L, n, alpha_true=None, p=1.5, phi_range=(5.0, 15.0)):
    """Simulate an offset table whose spatial signal is ``alpha_true``."""
    if alpha_true is None:
        alpha_true = np.zeros(L)
    loc = rng.integers(0, L, size=n)
    theta = rng.normal(-0.16, 0.02, size=n)
    lp = np.log(theta_to_mean(theta, 1.5))
    mu = np.exp(lp + alpha_true[loc])
    phi = rng.uniform(phi_range[0], phi_range[1], size=n)
    y, _ = sample_cp(mu, phi, p, rng)
    return ObservationTable(
        location=loc, y=y, lp_mean=lp, phi=phi, weight=np.ones(n), n_locations=L
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
