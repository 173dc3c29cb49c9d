"""Scenario-driven adversary transforms.

All attacks are pure functions applied by the orchestrator during the
communication phase: additive injection (FDI), constant replacement
(hijack), coordinated multi-agent injection (stealth/balanced), Bernoulli
message loss plus extra delay (DoS/latency), and consensus-vote forgery.
Outside its time window every attack is the identity.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, InvalidZeta, UnknownAttackKind

ATTACK_KINDS = ("stealth", "fdi", "hijack", "dos", "delay", "forge_votes")

# which payload stream a signal attack manipulates
SIGNALS = ("current", "voltage")


@dataclass
class AttackSpec:
    kind: str
    start: float
    stop: float
    targets: list = field(default_factory=list)       # agent ids or (src, dst) channels
    magnitude: float = 0.0                            # injection / constant / extra delay (s)
    vector: np.ndarray | None = None                  # stealth injection per agent
    zeta: int = 1                                     # hijack switch
    loss_p: float = 0.0                               # DoS drop probability
    signal: str = "current"
    controlled_nodes: list = field(default_factory=list)
    desired: str = "accept"
    suppress_self_report: bool = False

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise UnknownAttackKind(f"unknown attack kind {self.kind!r}", section="attacks")
        if not self.start < self.stop:
            raise ValueError("attack window must satisfy start < stop")
        if not 0.0 <= self.loss_p <= 1.0:
            raise ValueError("loss probability must lie in [0, 1]")
        if self.zeta not in (0, 1):
            raise InvalidZeta(f"hijack switch must be 0 or 1, got {self.zeta}")
        if self.signal not in SIGNALS:
            raise ValueError(f"signal must be one of {SIGNALS}")
        if self.vector is not None:
            self.vector = np.asarray(self.vector, dtype=float)

    def active(self, t):
        return self.start <= t < self.stop


def inject_fdi(x, c_a):
    """Additive false-data injection: x + c_a."""
    return x + c_a


def inject_hijack(x, zeta, c_a):
    """Constant-replacement attack: (1 - zeta) * x + c_a.

    With zeta = 1 the output is the constant c_a regardless of x.
    """
    if zeta not in (0, 1):
        raise InvalidZeta(f"hijack switch must be 0 or 1, got {zeta}")
    return (1 - zeta) * x + c_a


def inject_stealth(signals, vector, distribution=None):
    """Coordinated per-agent additive injection.

    Returns (signals + vector, stealthy) where ``stealthy`` reports whether
    the vector lies in the null space of the attack-distribution matrix
    (max |W @ vector| <= 1e-9 relative) -- a true stealth vector -- or is a
    balanced-but-visible injection. Pass ``distribution`` to get the flag;
    without it the flag is None.
    """
    signals = np.asarray(signals, dtype=float)
    vector = np.asarray(vector, dtype=float)
    if signals.shape != vector.shape:
        raise DimensionMismatch(
            f"signal shape {signals.shape} != vector shape {vector.shape}")
    stealthy = None
    if distribution is not None:
        from .topology import is_stealthy
        stealthy = is_stealthy(distribution, vector)
    return signals + vector, stealthy


def apply_channel_faults(messages, loss_p, extra_delay, rng):
    """Drop each in-flight message with probability ``loss_p`` and shift the
    survivors' delivery times by ``extra_delay`` seconds.

    ``messages`` is a sequence of (deliver_t, payload) pairs; a new list is
    returned. One uniform draw is consumed per message so runs are
    reproducible for a fixed generator state.
    """
    out = []
    for deliver_t, payload in messages:
        if loss_p > 0.0 and rng.random() < loss_p:
            continue
        out.append((deliver_t + extra_delay, payload))
    return out


def forge_votes(verdicts, controlled_nodes, desired):
    """Overwrite the verdicts of adversary-controlled voters.

    ``verdicts`` maps voter id -> decision string; controlled voters are
    forced to ``desired`` ("accept" or "reject"). Returns a new dict.
    """
    if desired not in ("accept", "reject"):
        raise ValueError("desired verdict must be 'accept' or 'reject'")
    forged = dict(verdicts)
    for node in controlled_nodes:
        if node in forged:
            forged[node] = desired
    return forged
