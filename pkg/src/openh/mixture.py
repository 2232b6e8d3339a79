"""Training-mixture ratios with per-dataset caps, and a sampling stream."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from openh.errors import InfeasibleMixtureError, MixtureError
from openh.rng import substream
from openh.schema import MixtureEntry

RATIO_SUM_TOL = 1e-9
TABLE_HEADER = ("Dataset / Embodiment Group", "Mixture ratio")


@dataclass
class MixtureSpec:
    sizes: dict[str, float]
    caps: dict[str, float] = field(default_factory=dict)
    seed: int = 0

    def check(self):
        if not self.sizes:
            raise MixtureError("mixture has no datasets")
        for k, v in self.sizes.items():
            if not v > 0:
                raise MixtureError(f"size of {k!r} must be positive, got {v}")
        for k, c in self.caps.items():
            if k not in self.sizes:
                raise MixtureError(f"cap for unknown dataset {k!r}")
            if not 0 < c < 1:
                raise MixtureError(f"cap for {k!r} must lie in (0, 1), got {c}")


def solve_mixture(spec: MixtureSpec) -> list[MixtureEntry]:
    """Water-filling: proportional to size, with capped datasets pinned at their cap.

    Any dataset whose proportional share of the remaining mass exceeds its
    cap is fixed at the cap and the remainder is redistributed among the
    others; this repeats until nothing violates a cap.
    """
    spec.check()
    ids = list(spec.sizes)
    fixed: dict[str, float] = {}
    while True:
        free = [k for k in ids if k not in fixed]
        remaining = 1.0 - sum(fixed.values())
        if not free:
            raise InfeasibleMixtureError(
                f"caps sum to {sum(fixed.values()):.6g} < 1 with every dataset capped"
            )
        total = sum(spec.sizes[k] for k in free)
        share = {k: remaining * spec.sizes[k] / total for k in free}
        over = [k for k in free if k in spec.caps and share[k] > spec.caps[k]]
        if not over:
            break
        for k in over:
            fixed[k] = spec.caps[k]
    ratios = {**share, **fixed}
    return [MixtureEntry(k, ratios[k]) for k in ids]


def _check_ratios(ratios: Sequence[MixtureEntry]):
    if not ratios:
        raise MixtureError("empty mixture")
    total = sum(e.ratio for e in ratios)
    if abs(total - 1.0) > RATIO_SUM_TOL:
        raise MixtureError(f"ratios sum to {total!r}, expected 1")
    for e in ratios:
        if not 0 < e.ratio <= 1:
            raise MixtureError(f"ratio of {e.dataset_id!r} outside (0, 1]: {e.ratio}")


def sample_stream(ratios: Sequence[MixtureEntry], seed: int, n_steps: int, stream: int = 0) -> list[str]:
    """Dataset id for each training step by inverse-CDF sampling.

    ``stream`` selects an independent per-worker substream of ``seed``.
    """
    _check_ratios(ratios)
    cdf = np.cumsum([e.ratio for e in ratios])
    cdf[-1] = 1.0
    u = substream(seed, "mixture", stream).random(n_steps)
    idx = np.searchsorted(cdf, u, side="right")
    ids = [e.dataset_id for e in ratios]
    return [ids[i] for i in idx]


def normalize_ratios(weights: Mapping[str, float]) -> list[MixtureEntry]:
    """Rescale arbitrary nonnegative weights (e.g. relative compute weights) to sum 1."""
    total = sum(weights.values())
    if not total > 0:
        raise MixtureError("weights must have a positive sum")
    return [MixtureEntry(k, v / total) for k, v in weights.items() if v > 0]


def format_mixture_table(ratios: Sequence[MixtureEntry], groups: Mapping[str, Sequence[str]] | None = None) -> str:
    """Two-column text table: group rows carry the ratio, member rows are indented."""
    width = max([len(TABLE_HEADER[0])] + [len(e.dataset_id) for e in ratios]
                + [len(m) + 2 for ms in (groups or {}).values() for m in ms])
    lines = [f"{TABLE_HEADER[0]:<{width}}  {TABLE_HEADER[1]}", "-" * (width + 2 + len(TABLE_HEADER[1]))]
    for e in ratios:
        lines.append(f"{e.dataset_id:<{width}}  {e.ratio:.4f}")
        for member in (groups or {}).get(e.dataset_id, ()):
            lines.append(f"  {member}")
    return "\n".join(lines) + "\n"


_ROW = re.compile(r"^(?P<name>\S.*?)\s{2,}(?P<ratio>[0-9]*\.?[0-9]+)\s*$")


def parse_mixture_table(text: str, normalize: bool = True):
    """Parse a table written by ``format_mixture_table``.

    Returns ``(entries, groups)``.  Ratios are rescaled to sum 1 unless
    ``normalize`` is false.
    """
    weights: dict[str, float] = {}
    groups: dict[str, list[str]] = {}
    current = None
    for line in text.splitlines():
        if not line.strip() or line.startswith(TABLE_HEADER[0]) or set(line.strip()) == {"-"}:
            continue
        if line.startswith(" ") and current is not None:
            groups.setdefault(current, []).append(line.strip())
            continue
        m = _ROW.match(line)
        if not m:
            raise MixtureError(f"cannot parse mixture row {line!r}")
        current = m["name"]
        weights[current] = float(m["ratio"])
    if normalize:
        return normalize_ratios(weights), groups
    return [MixtureEntry(k, v) for k, v in weights.items()], groups
