"""Link-quality estimation from active probes and overheard traffic."""
from __future__ import annotations

import numpy as np


class LinkEstimator:
    """Blend of a probe success ratio and an EWMA of passive reception ratios.

    Counts accumulate over a window; :meth:`update` closes the window and
    returns ``alpha * probe_ratio + (1 - alpha) * passive_ewma`` for every
    pair.  Pairs without observations in the window keep their previous
    estimate (or the probe/passive half that was observed).
    """

    def __init__(self, n_nodes, alpha=0.5, beta=0.5, initial=None):
        if not 0 <= alpha <= 1 or not 0 < beta <= 1:
            raise ValueError("alpha must lie in [0, 1] and beta in (0, 1]")
        self.alpha = alpha
        self.beta = beta
        self.n = n_nodes
        self.estimate = np.eye(n_nodes) if initial is None else np.array(initial, dtype=float)
        self.passive = None  # EWMA of passive ratios, per pair
        self.probe_sent = np.zeros(n_nodes)
        self.probe_recv = np.zeros((n_nodes, n_nodes))
        self.data_sent = np.zeros(n_nodes)
        self.data_recv = np.zeros((n_nodes, n_nodes))

    def record_probe(self, i, receivers):
        self.probe_sent[i] += 1
        for j in receivers:
            self.probe_recv[i, j] += 1

    def record_data(self, i, receivers):
        self.data_sent[i] += 1
        for j in receivers:
            self.data_recv[i, j] += 1

    def update(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            probe = self.probe_recv / self.probe_sent[:, None]
            passive_now = self.data_recv / self.data_sent[:, None]
        has_probe = (self.probe_sent > 0)[:, None] & np.ones((1, self.n), dtype=bool)
        has_data = (self.data_sent > 0)[:, None] & np.ones((1, self.n), dtype=bool)
        if self.passive is None:
            self.passive = np.where(has_data, passive_now, np.nan)
        else:
            blended = (1 - self.beta) * self.passive + self.beta * passive_now
            fresh = np.where(np.isnan(self.passive), passive_now, blended)
            self.passive = np.where(has_data, fresh, self.passive)
        have_passive = ~np.isnan(self.passive)
        passive = np.nan_to_num(self.passive)
        new = np.where(
            has_probe & have_passive,
            self.alpha * probe + (1 - self.alpha) * passive,
            np.where(has_probe, probe, np.where(have_passive, passive, self.estimate)),
        )
        np.fill_diagonal(new, 1.0)
        self.estimate = new
        self.probe_sent[:] = 0
        self.probe_recv[:] = 0
        self.data_sent[:] = 0
        self.data_recv[:] = 0
        return new.copy()


def link_estimator_update(estimator: LinkEstimator, probes=(), receptions=()):
    """Feed one window of ``(i, receivers)`` observations and close it."""
    for i, recv in probes:
        estimator.record_probe(i, recv)
    for i, recv in receptions:
        estimator.record_data(i, recv)
    return estimator.update()
