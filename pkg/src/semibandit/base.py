"""Common plumbing for online semibandit learners."""
from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator

from .core import Context, check_ranking
from .estimation import History, InteractionRecord, build_mixing

__all__ = ["SemibanditLearner", "epoch_rounds", "is_epoch_boundary"]


def epoch_rounds(T: int) -> list:
    """Rounds ``ceil(2**(i/2))`` up to ``T``, duplicates merged."""
    out, i = [], 0
    while True:
        r = math.ceil(2 ** (i / 2))
        if r > T:
            return out
        if not out or out[-1] != r:
            out.append(r)
        i += 1


def is_epoch_boundary(t: int) -> bool:
    if t < 1:
        return False
    # smallest i with 2**(i/2) >= t, then check the neighbours
    i = max(0, math.floor(2 * math.log2(t)) - 1)
    while math.ceil(2 ** (i / 2)) < t:
        i += 1
    return math.ceil(2 ** (i / 2)) == t


class SemibanditLearner(BaseEstimator):
    """Online learner driven by ``select(context, rng)`` then ``observe(y, r)``.

    Subclasses implement ``_choose`` (returning the ranking, the per-action
    propensities of the law it was drawn from, and an explore flag) and may
    override ``_after_observe``.  Every round is logged in ``history_``.
    ``last_explore`` and ``phase`` describe the most recent round.
    """

    phase = "learn"

    def _lazy_init(self, context: Context):
        if getattr(self, "history_", None) is None:
            self.history_ = History()
            self.K_ = context.K
            self._mixing_cache = {}
            self._init_state(context)

    def _init_state(self, context):
        pass

    def reset(self):
        """Forget everything learned; hyperparameters are kept."""
        for name in [k for k in vars(self) if k.endswith("_") and not k.startswith("_")]:
            delattr(self, name)
        self.history_ = None
        return self

    @property
    def t_(self) -> int:
        return len(self.history_) if getattr(self, "history_", None) is not None else 0

    def _slot_count(self):
        raise NotImplementedError

    def mixing_for(self, context, oracle=None):
        m = self._mixing_cache.get(context.id)
        if m is None:
            m = self._mixing_cache[context.id] = build_mixing(context, self._slot_count(), oracle)
        return m

    def select(self, context: Context, rng) -> tuple:
        self._lazy_init(context)
        ranking, marginals, explored, mixing = self._choose(context, rng)
        ranking = check_ranking(ranking, context.K, self._slot_count(), context.valid)
        self._pending = (context, ranking, np.asarray(marginals, dtype=float), explored, mixing)
        self.last_explore = bool(explored)
        return ranking

    def observe(self, observed_y, reward: float):
        """Log the feedback for the ranking returned by the last ``select``."""
        context, ranking, marginals, explored, mixing = self._pending
        self._pending = None
        record = InteractionRecord(
            context, ranking, observed_y, marginals[list(ranking)], reward, mixing, explored
        )
        self.history_.append(record)
        self._after_observe(record)

    def _after_observe(self, record):
        pass
