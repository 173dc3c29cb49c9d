"""Model-free local compensation for channel loss and large delays.

Each agent downsamples its local voltage-loop tracking error, compares a
candidate compensation pair against a decaying envelope of the raw error,
and on a trigger samples-and-holds correction terms that are added to the
secondary loop inputs. With unit gains the held correction replaces a
stalled or oscillating neighbor-driven input by the local downsampled
error, which is what keeps the loop stable when the network misbehaves.

All quantities are normalized (voltages divided by the nominal reference)
so the voltage and current channels share one scale.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientHistory


@dataclass
class PredictorParams:
    enabled: bool = False
    d: int = 4                 # downsampling factor (samples)
    b: int = 8                 # impulse-response window length (samples)
    h: np.ndarray | None = None
    alpha: float = 1.2
    t_loop: float = 1.92 / 15.0   # PI loop constant K_P/K_I
    k1: float = 1.0
    k2: float = 1.0
    trigger_floor: float = 1e-3   # numerical guard on the trigger norm

    def __post_init__(self):
        if self.d < 1 or self.b < 1:
            raise ValueError("d and b must be >= 1")
        if self.alpha <= 0.0 or self.t_loop <= 0.0:
            raise ValueError("alpha and t_loop must be > 0")
        if self.h is None:
            self.h = np.full(self.b, 1.0 / self.b)
        else:
            self.h = np.asarray(self.h, dtype=float)
        if self.h.shape != (self.b,):
            raise ValueError("impulse response must have length b")
        if abs(self.h.sum() - 1.0) > 1e-12:
            raise ValueError("impulse-response weights must sum to 1")


def downsample_error(history, d, b, h):
    """Decimated weighted sums of an error history.

    Output n covers the window ending at sample (n+1)*d - 1:

        out[n] = sum_{j=0}^{b-1} history[(n+1)*d - 1 - j] * h[j]

    Raises InsufficientHistory when no decimation point has a full window.
    """
    history = np.asarray(history, dtype=float)
    h = np.asarray(h, dtype=float)
    if b < 1 or d < 1:
        raise ValueError("window length and decimation factor must be >= 1")
    if h.shape != (b,):
        raise ValueError("impulse response must have length b")
    outs = []
    n = 0
    while True:
        end = (n + 1) * d - 1
        if end >= len(history):
            break
        if end - (b - 1) >= 0:
            window = history[end - b + 1: end + 1][::-1]
            outs.append(float(window @ h))
        n += 1
    if not outs:
        raise InsufficientHistory(
            f"need {b} samples on the decimation grid, have {len(history)}")
    return np.array(outs)


def prediction_trigger(e_pair, e_volt, alpha, t_loop, t, floor=0.0):
    """Event condition for resampling the compensation pair.

    True when the candidate pair outgrows a time-decaying envelope of the
    raw local error:  ||e_pair|| > alpha * ||exp(-t/T) * e_volt * [1 1]||.
    ``floor`` suppresses triggers on numerically negligible pairs.
    """
    lhs = float(np.hypot(e_pair[0], e_pair[1]))
    rhs = alpha * abs(np.exp(-t / t_loop) * e_volt) * np.sqrt(2.0)
    return lhs > max(rhs, floor)


@dataclass
class PredictorState:
    """Per-agent compensation state (sample-and-hold between triggers)."""

    e_volt_history: list = field(default_factory=list)
    e_down: float = 0.0
    e_down_ready: bool = False
    e_comp: tuple = (0.0, 0.0)
    e_del: tuple = (0.0, 0.0)
    last_trigger: float | None = None
    samples_seen: int = 0


class PredictorBank:
    """Runs the compensation pipeline for every agent.

    ``apply`` adds the currently held corrections to the loop inputs during
    the control phase; ``end_of_round`` ingests this round's local error,
    refreshes the decimated estimate, and re-evaluates the trigger so the
    new hold takes effect from the next round.
    """

    def __init__(self, params: PredictorParams, n_agents):
        self.params = params
        self.n = n_agents
        self.states = [PredictorState() for _ in range(n_agents)]
        self.trigger_flags = np.zeros(n_agents, dtype=bool)
        self.trigger_counts = np.zeros(n_agents, dtype=int)

    def apply(self, k, u_volt, u_curr):
        """Compensated (voltage, current) loop inputs for agent k."""
        if not self.params.enabled:
            return u_volt, u_curr
        e_del = self.states[k].e_del
        return u_volt + e_del[0], u_curr + e_del[1]

    def end_of_round(self, t, e_volt_norm, u_volt, u_curr):
        """Ingest local errors and raw loop inputs; update holds/triggers."""
        p = self.params
        self.trigger_flags[:] = False
        if not p.enabled:
            return
        for k, st in enumerate(self.states):
            st.e_volt_history.append(float(e_volt_norm[k]))
            if len(st.e_volt_history) > 4 * p.b * p.d:
                del st.e_volt_history[: 2 * p.b * p.d]
            st.samples_seen += 1
            if st.samples_seen % p.d == 0 and len(st.e_volt_history) >= p.b:
                window = np.array(st.e_volt_history[-p.b:][::-1])
                st.e_down = float(window @ p.h)
                st.e_down_ready = True
            if not st.e_down_ready:
                continue
            cand = (st.e_down - float(u_volt[k]), st.e_down - float(u_curr[k]))
            if prediction_trigger(cand, st.e_volt_history[-1], p.alpha, p.t_loop,
                                  t, floor=p.trigger_floor):
                st.e_comp = cand
                st.e_del = (p.k1 * cand[0], p.k2 * cand[1])
                st.last_trigger = t
                self.trigger_flags[k] = True
                self.trigger_counts[k] += 1

    def e_down_values(self):
        return np.array([st.e_down for st in self.states])
