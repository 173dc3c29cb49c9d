"""Distributed secondary controller.

Each agent runs a consensus voltage observer (average-voltage estimate), a
per-unit current-mismatch term, and two PI correction loops whose sum shifts
the local voltage reference. Neighbor data arrives through validated inbox
buffers only; both the neighbor value and the agent's own history are read
at the same data timestamp so that channel delay enters the dynamics
symmetrically.
"""

from bisect import bisect_right
from dataclasses import dataclass

import numpy as np


@dataclass
class ControllerParams:
    v_ref: float
    v_min: float
    v_max: float
    i_max: np.ndarray
    kp_h1: float = 1.92
    ki_h1: float = 15.0
    kp_h2: float = 4.5
    ki_h2: float = 0.08
    c: float = 1.4
    i_ref: float = 0.0
    comm_delay_tau: float = 0.0

    def __post_init__(self):
        self.i_max = np.asarray(self.i_max, dtype=float)
        for name in ("kp_h1", "ki_h1", "kp_h2", "ki_h2", "c"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")
        if np.any(self.i_max <= 0.0):
            raise ValueError("i_max must be positive")


def observer_update(v_bar, local_v, local_v_prev, neighbor_terms, dt):
    """One Euler step of the average-voltage observer.

    The estimate follows the local measurement directly and accumulates the
    weighted disagreement with the neighbors' (possibly delayed) estimates:

        v_bar' = v_bar + (local_v - local_v_prev)
                 + dt * sum_j a_kj * (v_bar_j - v_bar_own_then)

    ``neighbor_terms`` is an iterable of (weight, v_bar_j, v_bar_own_then)
    where both values are sampled at the same data timestamp.
    """
    cons = 0.0
    for weight, v_bar_j, v_bar_own in neighbor_terms:
        cons += weight * (v_bar_j - v_bar_own)
    return v_bar + (local_v - local_v_prev) + dt * cons


def current_mismatch(neighbor_terms, c):
    """Coupling-weighted per-unit current disagreement.

    ``neighbor_terms`` holds (weight, i_pu_j, i_pu_own_then) tuples with both
    per-unit currents sampled at the same data timestamp. An empty iterable
    gives 0 (isolated agent).
    """
    delta = 0.0
    for weight, i_pu_j, i_pu_own in neighbor_terms:
        delta += c * weight * (i_pu_j - i_pu_own)
    return delta


def voltage_corrections(e1, delta, integ1, integ2, params: ControllerParams, dt,
                        clamped_low=False, clamped_high=False):
    """PI correction pair from the voltage error and the current mismatch.

    Integrators advance by explicit Euler. Conditional anti-windup: while the
    reference output is clamped, integration that would push it further past
    the limit is frozen.
    """
    def advance(i, err):
        if clamped_high and err > 0.0:
            return i
        if clamped_low and err < 0.0:
            return i
        return i + dt * err

    integ1 = advance(integ1, e1)
    integ2 = advance(integ2, delta)
    dv1 = params.kp_h1 * e1 + params.ki_h1 * integ1
    dv2 = params.kp_h2 * delta + params.ki_h2 * integ2
    return dv1, dv2, integ1, integ2


def local_reference(dv1, dv2, params: ControllerParams, extra=0.0):
    """Voltage setpoint v_ref + dv1 + dv2 (+ injected extra), clamped.

    Returns (v_star, clamped_low, clamped_high).
    """
    raw = params.v_ref + dv1 + dv2 + extra
    if raw > params.v_max:
        return params.v_max, False, True
    if raw < params.v_min:
        return params.v_min, True, False
    return raw, False, False


class _TimedBuffer:
    """Append-only (t, value...) buffer with newest-at-or-before lookup."""

    __slots__ = ("ts", "vals")

    def __init__(self):
        self.ts = []
        self.vals = []

    def push(self, t, value):
        # entries may arrive out of order under channel delay; keep sorted
        if self.ts and t < self.ts[-1]:
            i = bisect_right(self.ts, t)
            self.ts.insert(i, t)
            self.vals.insert(i, value)
        else:
            self.ts.append(t)
            self.vals.append(value)

    def at_or_before(self, t):
        """Newest entry with timestamp <= t; falls back to the oldest entry
        (hold-last degraded mode) or None when empty."""
        if not self.ts:
            return None
        i = bisect_right(self.ts, t)
        if i == 0:
            return self.ts[0], self.vals[0]
        return self.ts[i - 1], self.vals[i - 1]

    def prune(self, t_keep):
        i = bisect_right(self.ts, t_keep)
        if i > 1:
            # always retain at least one entry at or before t_keep
            del self.ts[: i - 1]
            del self.vals[: i - 1]


class ControllerBank:
    """Secondary-control state for all agents plus their inbox buffers.

    The inbox is the only channel through which neighbor data reaches the
    control laws; the engine pushes entries exclusively from committed
    blocks or self-heal reconstructions.
    """

    HISTORY_KEEP = 2.0  # seconds of own/neighbor history retained

    def __init__(self, params: ControllerParams, graph):
        self.params = params
        self.graph = graph
        n = graph.n
        self.n = n
        self.v_bar = np.full(n, params.v_ref)
        self.integ1 = np.zeros(n)
        self.integ2 = np.zeros(n)
        self.dv1 = np.zeros(n)
        self.dv2 = np.zeros(n)
        self.delta = np.zeros(n)
        self.v_star = np.full(n, params.v_ref)
        self.clamped = np.zeros(n, dtype=bool)
        self._v_meas_prev = np.full(n, params.v_ref)
        # inbox[(k, j)]), data received by k about neighbor j
        self.inbox = {}
        self.self_hist = [_TimedBuffer() for _ in range(n)]
        for k in range(n):
            for j in graph.neighbors(k):
                self.inbox[(k, int(j))] = _TimedBuffer()

    def seed(self, t, v_meas, i_pu):
        """Initialize estimates and histories from the first measurement."""
        self.v_bar = np.array(v_meas, dtype=float)
        self._v_meas_prev = np.array(v_meas, dtype=float)
        for k in range(self.n):
            self.self_hist[k].push(t, (self.v_bar[k], float(i_pu[k])))

    def inbox_push(self, k, j, t_data, v_bar_j, i_pu_j):
        self.inbox[(k, int(j))].push(t_data, (float(v_bar_j), float(i_pu_j)))

    def record_own(self, t, i_pu):
        for k in range(self.n):
            self.self_hist[k].push(t, (float(self.v_bar[k]), float(i_pu[k])))

    def _neighbor_terms(self, k, t):
        """(weight, neighbor value pair, own value pair) at matched times."""
        cutoff = t - self.params.comm_delay_tau
        terms = []
        for j in self.graph.neighbors(k):
            entry = self.inbox[(k, int(j))].at_or_before(cutoff)
            if entry is None:
                continue
            t_data, (v_bar_j, i_pu_j) = entry
            own = self.self_hist[k].at_or_before(t_data)
            if own is None:
                continue
            _, (v_bar_own, i_pu_own) = own
            w = float(self.graph.adjacency[k, j])
            terms.append((w, (v_bar_j, i_pu_j), (v_bar_own, i_pu_own)))
        return terms

    def round_update(self, t, dt, v_meas, i_pu, input_adjust=None, dv1_extra=None):
        """Advance every agent one communication round.

        ``input_adjust`` optionally remaps the raw loop inputs (voltage
        error, current mismatch) per agent -- the hook used by the local
        delay compensator. ``dv1_extra`` is an additive actuator-level
        injection on the voltage-correction path (attack surface).
        """
        p = self.params
        for k in range(self.n):
            terms = self._neighbor_terms(k, t)
            v_terms = [(w, nb[0], own[0]) for w, nb, own in terms]
            i_terms = [(w, nb[1], own[1]) for w, nb, own in terms]
            self.v_bar[k] = observer_update(
                self.v_bar[k], v_meas[k], self._v_meas_prev[k], v_terms, dt)
            self.delta[k] = current_mismatch(i_terms, p.c)

        self._v_meas_prev = np.array(v_meas, dtype=float)

        e1 = p.v_ref - self.v_bar
        delta_used = self.delta.copy()
        e1_used = e1.copy()
        if input_adjust is not None:
            for k in range(self.n):
                e1_used[k], delta_used[k] = input_adjust(k, e1[k], self.delta[k])

        for k in range(self.n):
            dv1, dv2, i1, i2 = voltage_corrections(
                e1_used[k], delta_used[k], self.integ1[k], self.integ2[k], p, dt,
                clamped_low=self.clamped[k] and self.v_star[k] <= p.v_min,
                clamped_high=self.clamped[k] and self.v_star[k] >= p.v_max)
            extra = 0.0 if dv1_extra is None else float(dv1_extra[k])
            v_star, lo, hi = local_reference(dv1, dv2, p, extra=extra)
            self.dv1[k], self.dv2[k] = dv1, dv2
            self.integ1[k], self.integ2[k] = i1, i2
            self.v_star[k] = v_star
            self.clamped[k] = lo or hi

        keep = t - self.HISTORY_KEEP
        for buf in self.self_hist:
            buf.prune(keep)
        for buf in self.inbox.values():
            buf.prune(keep)

    def detection_signal(self):
        """Voltage-correction signal published for the physics contract:
        the proportional correction, which vanishes at any clean steady
        state regardless of integrator history."""
        return self.params.kp_h1 * (self.params.v_ref - self.v_bar)
