"""Optional recording of distances to nondifferentiable kinks.

The gradient checker compares analytic gradients against finite differences,
which is only meaningful away from ReLU/hinge/max kinks. Computation sites
report their kink slack here; recording is a no-op unless a collector is
active, so the training path pays nothing.
"""

from __future__ import annotations

from contextlib import contextmanager

import torch

_active: list[tuple[str, float]] | None = None


@contextmanager
def collect_kink_slacks():
    """Collect (site, min-slack) tuples from all kink sites reached inside."""
    global _active
    previous = _active
    _active = []
    try:
        yield _active
    finally:
        _active = previous


def record_slack(site: str, distances: torch.Tensor) -> None:
    """Report absolute distances of pre-kink arguments from their kink."""
    if _active is None or distances.numel() == 0:
        return
    _active.append((site, float(distances.detach().abs().min())))


def record_gap(site: str, gaps: torch.Tensor) -> None:
    """Report already-nonnegative gaps (e.g. argmax margins)."""
    if _active is None or gaps.numel() == 0:
        return
    _active.append((site, float(gaps.detach().min())))
