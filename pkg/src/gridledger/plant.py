"""Electrical layer: converter output dynamics and the resistive DC network.

Converters are modeled as first-order reference-tracking voltage sources
feeding a purely resistive tie-line network with conductance loads. Bus
voltages follow from nodal analysis each step; an optional second-order
LC mode is available for converters when the scenario asks for it.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NonFiniteState, SingularNetwork

KCL_TOL = 1e-6  # amps


@dataclass
class PlantParams:
    """Static electrical description of the network.

    line_edges entries are (bus_a, bus_b, resistance_ohm). Loads are
    piecewise-constant conductances: ``load_schedule`` maps activation time
    to {bus: siemens} and the latest entry at or before t is active.
    """

    n_agents: int
    agent_bus: list
    n_bus: int
    line_edges: list
    load_schedule: list                 # [(t_start, {bus: G}), ...] sorted
    i_max: np.ndarray
    i_min: np.ndarray
    v_min: float
    v_max: float
    v_ref: float
    tracking_tau: float = 5e-3
    dt: float = 1e-4
    l_se: np.ndarray | None = None      # used only in rlc mode
    c_dc: np.ndarray | None = None
    r_se: float = 0.5
    rating: np.ndarray | None = None
    rlc_mode: bool = False

    def __post_init__(self):
        self.i_max = np.asarray(self.i_max, dtype=float)
        self.i_min = np.asarray(self.i_min, dtype=float)
        if len(self.agent_bus) != self.n_agents:
            raise ValueError("agent_bus must list one bus per agent")
        if len(set(self.agent_bus)) != self.n_agents:
            raise ValueError("agent buses must be distinct")
        for a, b, r in self.line_edges:
            if r <= 0.0:
                raise ValueError(f"line ({a},{b}) resistance must be > 0, got {r}")
            if not (0 <= a < self.n_bus and 0 <= b < self.n_bus) or a == b:
                raise ValueError(f"line ({a},{b}) references invalid buses")
        if np.any(self.i_min > self.i_max):
            raise ValueError("i_min must not exceed i_max")
        if not (self.v_min < self.v_ref < self.v_max):
            raise ValueError("must have v_min < v_ref < v_max")
        if self.dt <= 0.0 or self.dt > self.tracking_tau / 5.0:
            raise ValueError("dt must satisfy 0 < dt <= tracking_tau/5")
        if not self.load_schedule:
            raise ValueError("load_schedule must have at least one entry")
        self.load_schedule = sorted(self.load_schedule, key=lambda e: e[0])

    def load_at(self, t):
        active = self.load_schedule[0][1]
        for t_start, loads in self.load_schedule:
            if t_start <= t:
                active = loads
            else:
                break
        return active


@dataclass
class MeasurementModel:
    """Additive-Gaussian measurement extraction with seeded noise streams.

    ``h`` defaults to the identity over the stacked (voltages, currents)
    vector. Identical seeds reproduce identical noise bit-exactly.
    """

    n_agents: int
    h: np.ndarray | None = None
    sigma_w: float = 0.0
    sigma_v: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma_w < 0.0 or self.sigma_v < 0.0:
            raise ValueError("noise levels must be >= 0")
        if self.h is None:
            self.h = np.eye(2 * self.n_agents)
        ss = np.random.SeedSequence(self.seed)
        meas_ss, proc_ss = ss.spawn(2)
        self._rng_meas = np.random.Generator(np.random.PCG64(meas_ss))
        self._rng_proc = np.random.Generator(np.random.PCG64(proc_ss))

    def process_noise(self, dt):
        """Euler-Maruyama increment for the tracking state, one per agent."""
        if self.sigma_v == 0.0:
            return np.zeros(self.n_agents)
        return self.sigma_v * np.sqrt(dt) * self._rng_proc.standard_normal(self.n_agents)

    def measurement_noise(self):
        if self.sigma_w == 0.0:
            return np.zeros(2 * self.n_agents)
        return self.sigma_w * self._rng_meas.standard_normal(2 * self.n_agents)


@dataclass
class PlantState:
    v_out: np.ndarray                  # converter output voltage per agent
    bus_v: np.ndarray                  # all bus voltages after network solve
    i_out: np.ndarray                  # clamped injected current per agent
    t: float = 0.0
    i_se: np.ndarray | None = None     # inductor current, rlc mode only
    saturated: np.ndarray | None = None

    def copy(self):
        return replace(
            self,
            v_out=self.v_out.copy(),
            bus_v=self.bus_v.copy(),
            i_out=self.i_out.copy(),
            i_se=None if self.i_se is None else self.i_se.copy(),
            saturated=None if self.saturated is None else self.saturated.copy(),
        )


class ResistiveNetwork:
    """Nodal-analysis solver with agent buses treated as voltage sources.

    For a fixed load pattern the solve reduces to two precomputed linear
    maps: bus voltages and injected currents are both matrix products with
    the source-voltage vector, so per-step cost is a pair of matvecs.
    """

    def __init__(self, params: PlantParams):
        self.params = params
        n_bus = params.n_bus
        g = np.zeros((n_bus, n_bus))
        for a, b, r in params.line_edges:
            c = 1.0 / r
            g[a, a] += c
            g[b, b] += c
            g[a, b] -= c
            g[b, a] -= c
        self._g_lines = g
        self._src = np.array(params.agent_bus, dtype=int)
        self._oth = np.array(
            [b for b in range(n_bus) if b not in set(params.agent_bus)], dtype=int
        )
        self._load = None
        self._maps = None

    def set_load(self, load_g: dict):
        """Install a load pattern {bus: conductance} and refactorize."""
        g = self._g_lines.copy()
        for bus, cond in load_g.items():
            g[bus, bus] += cond
        s, u = self._src, self._oth
        if len(u) > 0:
            g_uu = g[np.ix_(u, u)]
            g_us = g[np.ix_(u, s)]
            try:
                m = np.linalg.solve(g_uu, -g_us)
            except np.linalg.LinAlgError as exc:
                raise SingularNetwork(f"cannot solve network: {exc}") from exc
            if not np.all(np.isfinite(m)):
                raise SingularNetwork("network solve produced non-finite voltages")
            # i_src = (G @ v)[src] with v_u = M v_s
            k = g[np.ix_(s, s)] + g[np.ix_(s, u)] @ m
        else:
            m = np.zeros((0, len(s)))
            k = g[np.ix_(s, s)]
        self._load = dict(load_g)
        self._v_map = m
        self._i_map = k
        self._g_full = g

    def solve(self, v_sources):
        """Bus voltages and per-agent injected currents for given sources."""
        if self._load is None:
            raise SingularNetwork("set_load() must be called before solve()")
        v_sources = np.asarray(v_sources, dtype=float)
        if not np.all(np.isfinite(v_sources)):
            raise NonFiniteState("source voltages are not finite")
        bus_v = np.empty(self.params.n_bus)
        bus_v[self._src] = v_sources
        if len(self._oth) > 0:
            bus_v[self._oth] = self._v_map @ v_sources
        i_out = self._i_map @ v_sources
        return bus_v, i_out

    def kcl_residual(self, bus_v):
        """Net current imbalance: injections minus load draw (should be ~0)."""
        inj = (self._g_full @ bus_v)[self._src].sum()
        draw = sum(c * bus_v[b] for b, c in self._load.items())
        return inj - draw


def solve_network(params: PlantParams, v_sources, load_g):
    """One-shot nodal solve; see ResistiveNetwork for the cached variant."""
    net = ResistiveNetwork(params)
    net.set_load(load_g)
    return net.solve(v_sources)


def initial_state(params: PlantParams, network: ResistiveNetwork, v_init=None):
    """Flat start at the nominal voltage (or a given per-agent profile)."""
    v0 = np.full(params.n_agents, params.v_ref) if v_init is None else np.asarray(v_init, float)
    network.set_load(params.load_at(0.0))
    bus_v, i_out = network.solve(v0)
    i_clamped = np.clip(i_out, params.i_min, params.i_max)
    state = PlantState(
        v_out=v0.copy(),
        bus_v=bus_v,
        i_out=i_clamped,
        t=0.0,
        saturated=(i_out > params.i_max) | (i_out < params.i_min),
    )
    if params.rlc_mode:
        state.i_se = i_clamped.copy()
    return state


def step_plant(state: PlantState, v_ref, params: PlantParams,
               network: ResistiveNetwork, noise: MeasurementModel | None = None):
    """Advance the plant one explicit-Euler step of length params.dt.

    The tracking state moves toward ``v_ref`` with time constant
    ``tracking_tau`` (plus optional process noise), then the resistive
    network is re-solved and currents are clamped to the converter limits.
    """
    dt = params.dt
    v_ref = np.asarray(v_ref, dtype=float)
    w = noise.process_noise(dt) if noise is not None else 0.0

    if params.rlc_mode:
        l = params.l_se if params.l_se is not None else np.full(params.n_agents, 3e-3)
        c = params.c_dc if params.c_dc is not None else np.full(params.n_agents, 250e-6)
        i_se = state.i_se + dt * (v_ref - state.v_out - params.r_se * state.i_se) / l
        v_out = state.v_out + dt * (i_se - state.i_out) / c + w
    else:
        i_se = None
        v_out = state.v_out + dt * (v_ref - state.v_out) / params.tracking_tau + w

    if not np.all(np.isfinite(v_out)):
        raise NonFiniteState(f"converter voltages non-finite at t={state.t:.6f}")

    t_next = state.t + dt
    load = params.load_at(t_next)
    if load != network._load:
        network.set_load(load)
    bus_v, i_raw = network.solve(v_out)
    saturated = (i_raw > params.i_max) | (i_raw < params.i_min)
    i_out = np.clip(i_raw, params.i_min, params.i_max)
    return PlantState(v_out=v_out, bus_v=bus_v, i_out=i_out, t=t_next,
                      i_se=i_se, saturated=saturated)


def measure(state: PlantState, model: MeasurementModel, t=None):
    """Noisy measurement of the stacked (v_out, i_out) vector.

    Returns (v_meas, i_meas) arrays. With sigma_w = 0 the measurement
    equals the state exactly.
    """
    x = np.concatenate([state.v_out, state.i_out])
    y = model.h @ x + model.measurement_noise()
    n = model.n_agents
    return y[:n], y[n:]
