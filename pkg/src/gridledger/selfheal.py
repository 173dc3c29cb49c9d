"""Event-driven recovery of compromised signals.

When an agent is flagged, its raw outgoing signal is suppressed at once and
a trustworthy replacement is reconstructed for its neighbors: the nearest
unflagged donor's corresponding per-unit signal, sampled at triggering
instants and held between them (zero-order hold), rescaled to the victim's
rating, with the victim's last trusted ledger value as the fallback when
the donor channel is unavailable. After a validation window with clean
metrics the reconstructed signal is re-admitted to the ledger; multiple
victims resume stepwise, ordered by hop distance from the donor and then
by agent id.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import AllNodesCompromised, NoTrustedSource


def hop_distances(g, source):
    """BFS hop counts over the cyber graph from ``source``."""
    dist = np.full(g.n, -1, dtype=int)
    dist[source] = 0
    frontier = [source]
    while frontier:
        nxt = []
        for u in frontier:
            for v in g.neighbors(u):
                v = int(v)
                if dist[v] < 0:
                    dist[v] = dist[u] + 1
                    nxt.append(v)
        frontier = nxt
    return dist


def select_donor(flagged, flags, g):
    """Nearest unflagged agent by hop distance, ties broken by lowest id.

    Multi-hop donors are permitted. Raises AllNodesCompromised when no
    unflagged agent exists (the N-1 resiliency limit).
    """
    candidates = [k for k in range(g.n) if not flags[k]]
    if not candidates:
        raise AllNodesCompromised("every agent is flagged; cannot reconstruct")
    dist = hop_distances(g, flagged)
    reachable = [(dist[k], k) for k in candidates if dist[k] >= 0]
    if not reachable:
        raise AllNodesCompromised("no trustworthy agent is reachable")
    return min(reachable)[1]


def reconstruct_signal(donor_value, last_trusted_own, rescale=1.0):
    """Replacement value: rescaled donor sample, falling back to the
    victim's own last trusted value when the donor is unavailable."""
    if donor_value is not None:
        return donor_value * rescale
    if last_trusted_own is not None:
        return last_trusted_own
    raise NoTrustedSource("neither donor nor own trusted value available")


@dataclass
class HealEvent:
    agent: int
    signal: str                  # "current" or "voltage"
    t_trigger: float
    donor: int
    held_value: float
    resume_at: float
    resumed: bool = False


@dataclass
class HealState:
    """Quarantine bookkeeping for every victim currently being healed."""

    validation_window: float = 0.15
    event_threshold: float = 0.01    # donor relative change that retriggers
    events: list = field(default_factory=list)
    active: dict = field(default_factory=dict)   # victim -> HealEvent

    def quarantined(self, k):
        return k in self.active

    def start(self, victim, signal, t, donor, donor_value, order_rank):
        """Open a heal for ``victim``; resume is scheduled stepwise."""
        resume_at = t + self.validation_window * (order_rank + 1)
        ev = HealEvent(agent=victim, signal=signal, t_trigger=t, donor=donor,
                       held_value=donor_value, resume_at=resume_at)
        self.active[victim] = ev
        self.events.append(ev)
        return ev

    def refresh(self, victim, t, donor_value):
        """Zero-order hold with an event trigger: resample only when the
        donor value moved by more than the relative threshold."""
        ev = self.active[victim]
        ref = max(abs(ev.held_value), 1e-9)
        if abs(donor_value - ev.held_value) > self.event_threshold * ref:
            ev.held_value = donor_value
            ev.t_trigger = t
        return ev.held_value

    def postpone(self, victim, extra):
        """Restart the validation window (metrics were still violating)."""
        self.active[victim].resume_at += extra

    def resume(self, victim):
        ev = self.active.pop(victim)
        ev.resumed = True
        return ev

    def drop(self, victim):
        self.active.pop(victim, None)
