"""Physics-informed detection metrics and the misbehavior flag machine.

Two product-form consensus-mismatch statistics are evaluated per agent per
round from committed values only:

    dm1_k = h_k * [sum_j a_kj (s_j - s_k)] * [sum_j a_kj (s_j + s_k)]
    dm2_k = c_k * [sum_j a_kj (q_j - q_k)] * [sum_j a_kj (q_j + q_k)]

where s is the published voltage-correction signal and q the published
per-unit current. Both signals are equal across agents at any clean
consensus steady state, so both metrics vanish there; a manipulated
publication drives the product positive. The criterion is one-sided
(violation only when the metric exceeds its threshold) and a flag is
raised only after a configurable number of consecutive violating rounds.
"""

from dataclasses import dataclass, field

import numpy as np


def dm_voltage(dv1_local, dv1_neighbors, weights, h_k):
    """Voltage-channel metric for one agent.

    ``dv1_neighbors`` and ``weights`` are aligned sequences over the
    agent's neighbors.
    """
    diff = sum(w * (v - dv1_local) for w, v in zip(weights, dv1_neighbors))
    tot = sum(w * (v + dv1_local) for w, v in zip(weights, dv1_neighbors))
    return h_k * diff * tot


def dm_current(iref_local, iref_neighbors, weights, c_k):
    """Current-channel metric for one agent (per-unit reference values)."""
    diff = sum(w * (q - iref_local) for w, q in zip(weights, iref_neighbors))
    tot = sum(w * (q + iref_local) for w, q in zip(weights, iref_neighbors))
    return c_k * diff * tot


@dataclass
class DetectionParams:
    h_k: float = 2.5
    c_k: float = 1.4
    upsilon1: float = 0.025
    upsilon2: float = 0.035
    debounce: int = 3            # consecutive violating rounds before a flag
    clear_window: int = 150      # consecutive clean rounds before release
    arm_time: float = 0.5        # contract armed after startup transients

    def __post_init__(self):
        if self.h_k <= 0.0 or self.c_k <= 0.0:
            raise ValueError("metric gains must be positive")
        if self.upsilon1 <= 0.0 or self.upsilon2 <= 0.0:
            raise ValueError("thresholds must be positive")
        if self.debounce < 1:
            raise ValueError("debounce must be >= 1")


@dataclass
class AgentFlag:
    flagged: bool = False
    signal: str = ""             # "voltage" or "current" (first violating metric)
    violation_streak: int = 0
    clean_streak: int = 0
    raised_at: float = -1.0


@dataclass
class DetectionState:
    """Per-round metric values and the per-agent flag machine."""

    params: DetectionParams
    n: int
    dm1: np.ndarray = field(init=False)
    dm2: np.ndarray = field(init=False)
    flags: list = field(init=False)
    transitions: list = field(init=False)

    def __post_init__(self):
        self.dm1 = np.zeros(self.n)
        self.dm2 = np.zeros(self.n)
        self.flags = [AgentFlag() for _ in range(self.n)]
        self.transitions = []

    def evaluate(self, k, det_v_k, i_pu_k, neighbor_vals, weights):
        """Metrics for agent k's published pair against its neighbors'
        last committed pairs. ``neighbor_vals`` holds (det_v_j, i_pu_j)."""
        p = self.params
        dv = [v for v, _ in neighbor_vals]
        iq = [q for _, q in neighbor_vals]
        dm1 = dm_voltage(det_v_k, dv, weights, p.h_k)
        dm2 = dm_current(i_pu_k, iq, weights, p.c_k)
        return dm1, dm2

    def violation(self, dm1, dm2):
        p = self.params
        if dm1 > p.upsilon1:
            return "voltage"
        if dm2 > p.upsilon2:
            return "current"
        return None

    def record_round(self, k, t, dm1, dm2, violated_signal):
        """Update streaks and flags for agent k after this round's check.

        Returns "raised", "cleared", or None.
        """
        self.dm1[k] = dm1
        self.dm2[k] = dm2
        flag = self.flags[k]
        event = None
        if violated_signal is not None:
            flag.violation_streak += 1
            flag.clean_streak = 0
            if not flag.flagged and flag.violation_streak >= self.params.debounce:
                flag.flagged = True
                flag.signal = violated_signal
                flag.raised_at = t
                event = "raised"
                self.transitions.append((t, k, "raised", violated_signal))
        else:
            flag.violation_streak = 0
            if flag.flagged:
                flag.clean_streak += 1
                if flag.clean_streak >= self.params.clear_window:
                    flag.flagged = False
                    flag.clean_streak = 0
                    event = "cleared"
                    self.transitions.append((t, k, "cleared", flag.signal))
        return event

    def flagged_agents(self):
        return [k for k, f in enumerate(self.flags) if f.flagged]

    def flag_vector(self):
        return np.array([f.flagged for f in self.flags], dtype=bool)
