"""Trial-outcome statistics: exact binomial intervals, Fisher's exact test,
Holm step-down adjustment, task survival and subtask averages."""

from __future__ import annotations

import functools
import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import binom, hypergeom

from openh.errors import EvalError

BISECTION_TOL = 1e-12
FISHER_RELATIVE_TOL = 1e-7


def _check_counts(k: int, n: int):
    if int(k) != k or int(n) != n or n < 0 or not 0 <= k <= n:
        raise EvalError(f"invalid binomial counts k={k}, n={n}")


def _bisect(f, lo=0.0, hi=1.0):
    """Root of a monotone increasing ``f`` on [lo, hi]."""
    while hi - lo > BISECTION_TOL:
        mid = 0.5 * (lo + hi)
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def clopper_pearson(k: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    """Exact two-sided binomial interval by inverting the binomial tails."""
    _check_counts(k, n)
    if not 0 < confidence < 1:
        raise EvalError(f"confidence must lie in (0, 1), got {confidence}")
    if n == 0:
        return 0.0, 1.0
    half = (1.0 - confidence) / 2.0
    # P(X >= k; p) increases with p; P(X <= k; p) decreases with p.
    lo = 0.0 if k == 0 else _bisect(lambda p: binom.sf(k - 1, n, p) - half)
    hi = 1.0 if k == n else _bisect(lambda p: half - binom.cdf(k, n, p))
    return lo, hi


@functools.lru_cache(maxsize=4096)
def _hypergeom_pmf(n: int, row1: int, col1: int):
    """Support start and probabilities of the top-left cell given the margins."""
    support = np.arange(max(0, col1 - (n - row1)), min(row1, col1) + 1)
    pmf = hypergeom.pmf(support, n, row1, col1)
    pmf.setflags(write=False)
    return int(support[0]), pmf


def fisher_exact(table) -> float:
    """Two-sided Fisher exact p-value for a 2x2 table.

    Sums the hypergeometric probabilities of every table with the same
    margins that is no more likely than the observed one (relative
    tolerance 1e-7).
    """
    t = np.asarray(table)
    if t.shape != (2, 2) or np.any(t < 0) or np.any(t != np.round(t)):
        raise EvalError(f"expected a 2x2 table of nonnegative integers, got {table!r}")
    (a, b), (c, d) = t.astype(int).tolist()
    n = a + b + c + d
    row1, col1 = a + b, a + c
    if n == 0 or row1 in (0, n) or col1 in (0, n):
        return 1.0
    start, pmf = _hypergeom_pmf(n, row1, col1)
    observed = pmf[a - start]
    keep = pmf <= observed * (1 + FISHER_RELATIVE_TOL)
    included, excluded = math.fsum(pmf[keep]), math.fsum(pmf[~keep])
    # Sum the smaller side so that a table with nothing excluded gives 1 exactly.
    p = included if included < excluded else 1.0 - excluded
    return float(min(1.0, p))


def holm_bonferroni(pvals: Sequence[float]) -> list[float]:
    """Holm step-down adjusted p-values, in the input order."""
    p = np.asarray(pvals, dtype=np.float64)
    if np.any((p < 0) | (p > 1)) or not np.all(np.isfinite(p)):
        raise EvalError("p-values must lie in [0, 1]")
    m = p.size
    if m == 0:
        return []
    order = np.argsort(p, kind="stable")
    scaled = (m - np.arange(m)) * p[order]
    adjusted = np.minimum(1.0, np.maximum.accumulate(scaled))
    out = np.empty(m)
    out[order] = adjusted
    return out.tolist()


def _passed(item) -> bool:
    return bool(item[1] if isinstance(item, (tuple, list)) else item)


@dataclass(frozen=True)
class SurvivalCurve:
    stages: tuple[str, ...]
    surviving: tuple[int, ...]
    total: int


def survival_curve(trial_logs: Sequence[Sequence], stages: Sequence[str]) -> SurvivalCurve:
    """Count trials still successful after each sequential stage.

    A trial log is an ordered list of outcomes, either plain booleans for
    ``stages[0], stages[1], ...`` or ``(stage, passed)`` pairs.  Logs stop
    at the first failure; a stage that is not reported counts as not
    reached.
    """
    stages = tuple(stages)
    surviving = [0] * len(stages)
    for t, log in enumerate(trial_logs):
        if len(log) > len(stages):
            raise EvalError(f"trial {t}: {len(log)} outcomes for {len(stages)} stages")
        for s, item in enumerate(log):
            if isinstance(item, (tuple, list)):
                label, passed = item
                if label != stages[s]:
                    raise EvalError(f"trial {t}: stage {label!r} reported where {stages[s]!r} was expected")
            else:
                passed = item
            if s > 0 and not _passed(log[s - 1]):
                raise EvalError(f"trial {t}: outcome reported after a failure at stage {stages[s - 1]!r}")
            if passed:
                surviving[s] += 1
    return SurvivalCurve(stages, tuple(surviving), len(trial_logs))


def survival_logs_from_counts(counts: Sequence[int], total: int) -> list[list[bool]]:
    """Trial logs reproducing a non-increasing survival profile."""
    if any(b > a for a, b in zip(counts, counts[1:])) or (counts and counts[0] > total):
        raise EvalError("survival counts must be non-increasing and bounded by the trial count")
    logs = []
    for t in range(total):
        log = []
        for c in counts:
            log.append(t < c)
            if t >= c:
                break
        logs.append(log)
    return logs


@dataclass
class TrialOutcomeTable:
    """Successes and trials per (policy, subtask)."""

    subtasks: list[str]
    counts: dict[str, dict[str, tuple[int, int]]] = field(default_factory=dict)

    def __post_init__(self):
        for policy, row in self.counts.items():
            for subtask, (k, n) in row.items():
                if subtask not in self.subtasks:
                    raise EvalError(f"{policy}: unknown subtask {subtask!r}")
                _check_counts(k, n)

    @property
    def policies(self) -> list[str]:
        return list(self.counts)

    def get(self, policy: str, subtask: str) -> tuple[int, int]:
        return tuple(self.counts[policy].get(subtask, (0, 0)))

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrialOutcomeTable":
        counts = {p: {s: (int(kn[0]), int(kn[1])) for s, kn in row.items()} for p, row in d["policies"].items()}
        return cls(list(d["subtasks"]), counts)


@dataclass(frozen=True)
class SubtaskAverage:
    policy: str
    mean_rate: float
    subtasks_used: int
    pooled_successes: int
    pooled_trials: int
    pooled_interval: tuple[float, float]


def subtask_average(table: TrialOutcomeTable, confidence: float = 0.95) -> dict[str, SubtaskAverage]:
    """Unweighted mean of per-subtask success rates, plus a pooled exact interval.

    Subtasks with zero trials are skipped with a warning.
    """
    if not table.counts:
        raise EvalError("empty outcome table")
    out = {}
    for policy in table.policies:
        rates, k_sum, n_sum = [], 0, 0
        for subtask in table.subtasks:
            k, n = table.get(policy, subtask)
            if n == 0:
                warnings.warn(f"{policy}: subtask {subtask!r} has no trials and is excluded", RuntimeWarning,
                              stacklevel=2)
                continue
            rates.append(k / n)
            k_sum += k
            n_sum += n
        if not rates:
            raise EvalError(f"{policy}: no subtask has trials")
        out[policy] = SubtaskAverage(policy, float(np.mean(rates)), len(rates), k_sum, n_sum,
                                     clopper_pearson(k_sum, n_sum, confidence))
    return out


@dataclass(frozen=True)
class Comparison:
    subtask: str
    policy_a: str
    policy_b: str
    p_value: float
    p_adjusted: float


def pairwise_comparisons(table: TrialOutcomeTable, overall_label: str = "overall") -> list[Comparison]:
    """Fisher's exact test for every policy pair on every subtask and on pooled counts,
    Holm-adjusted across the whole family."""
    rows = []
    for a, b in itertools.combinations(table.policies, 2):
        for subtask in list(table.subtasks) + [overall_label]:
            if subtask == overall_label:
                ka = sum(table.get(a, s)[0] for s in table.subtasks)
                na = sum(table.get(a, s)[1] for s in table.subtasks)
                kb = sum(table.get(b, s)[0] for s in table.subtasks)
                nb = sum(table.get(b, s)[1] for s in table.subtasks)
            else:
                (ka, na), (kb, nb) = table.get(a, subtask), table.get(b, subtask)
            if na == 0 or nb == 0:
                continue
            rows.append((subtask, a, b, fisher_exact([[ka, na - ka], [kb, nb - kb]])))
    adjusted = holm_bonferroni([r[3] for r in rows])
    return [Comparison(*r, adj) for r, adj in zip(rows, adjusted)]
