"""Request ledger for sanitised subgradients.

Under pure eps-LDP with one release per record, the number of released
subgradients at a fixed eps is the privacy cost. The ledger counts them per
run label and refuses any charge that would overrun the budget.
"""

from __future__ import annotations

import threading


class BudgetExceededError(RuntimeError):
    """A charge would push the request count past the budget."""


class PrivacyLedger:
    def __init__(self, per_request_epsilon=None, budget=None):
        if budget is not None and budget < 0:
            raise ValueError(f"budget must be non-negative, got {budget}")
        self.per_request_epsilon = per_request_epsilon
        self.budget = budget
        self._breakdown = {}
        self._count = 0
        self._lock = threading.Lock()

    def __getstate__(self):
        with self._lock:
            state = dict(self.__dict__, _breakdown=dict(self._breakdown))
        del state["_lock"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.Lock()

    @property
    def request_count(self):
        return self._count

    @property
    def remaining(self):
        if self.budget is None:
            return None
        return self.budget - self._count

    @property
    def per_run_breakdown(self):
        with self._lock:
            return dict(self._breakdown)

    def charge(self, run_label, n=1):
        """Record ``n`` requests under ``run_label``; all or nothing."""
        if isinstance(n, bool) or int(n) != n or n < 1:
            raise ValueError(f"n must be a positive integer, got {n}")
        n = int(n)
        with self._lock:
            if self.budget is not None and self._count + n > self.budget:
                raise BudgetExceededError(
                    f"charging {n} request(s) to {run_label!r} would exceed the budget "
                    f"({self._count}/{self.budget} used)")
            self._count += n
            self._breakdown[run_label] = self._breakdown.get(run_label, 0) + n
        return self

    def merge(self, other):
        """Fold another ledger's charges into this one; all or nothing."""
        incoming = other.per_run_breakdown
        n = sum(incoming.values())
        with self._lock:
            if self.budget is not None and self._count + n > self.budget:
                raise BudgetExceededError(
                    f"merging {n} request(s) would exceed the budget ({self._count}/{self.budget} used)")
            self._count += n
            for label in sorted(incoming):
                self._breakdown[label] = self._breakdown.get(label, 0) + incoming[label]
        return self

    def report(self):
        with self._lock:
            breakdown = {k: self._breakdown[k] for k in sorted(self._breakdown)}
            total = self._count
        return {
            "per_request_epsilon": self.per_request_epsilon,
            "total": total,
            "budget": self.budget,
            "utilization": (total / self.budget) if self.budget else None,
            "breakdown": breakdown,
        }


def charge(ledger, run_label, n):
    return ledger.charge(run_label, n)


def report(ledger):
    return ledger.report()
