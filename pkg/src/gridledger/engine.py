"""Deterministic co-simulation loop.

Each communication round executes, in order: plant integration to the
round instant, measurement, secondary-control update, transaction sealing
(with attack transforms applied to the transmitted payloads), channel
fault application, per-node validation with the physics contract, majority
commit, the self-healing phase, and the local-compensation phase. All
randomness derives from one seed, so a run is a pure function of
(scenario, seed).
"""

import heapq
import time
from dataclasses import dataclass, field

import numpy as np

from . import ledger as lg
from .attacks import forge_votes
from .config import ScenarioConfig
from .control import ControllerBank
from .detection import DetectionState
from .errors import AllNodesCompromised, NonFiniteState
from .plant import MeasurementModel, ResistiveNetwork, initial_state, measure, step_plant
from .predictor import PredictorBank
from .selfheal import HealState, select_donor
from .topology import attack_distribution_matrix, is_stealthy

# publishing modes of the heal router
NORMAL, QUARANTINED, RECONSTRUCTED = "normal", "quarantined", "reconstructed"

CSV_AGENT_FIELDS = ("v_out", "i_out", "i_pu", "v_bar", "delta", "dv1", "dv2",
                    "v_star", "dm1", "dm2", "flag", "heal", "e_down", "trigger")


@dataclass
class TimeSeries:
    columns: list
    rows: list = field(default_factory=list)

    def header(self):
        return ",".join(self.columns)

    def as_array(self):
        return np.asarray(self.rows, dtype=float)

    def column(self, name):
        return self.as_array()[:, self.columns.index(name)]

    def agent_column(self, name, k):
        return self.column(f"{name}_{k + 1}")


@dataclass
class RunReport:
    scenario: str
    seed: int
    notes: list = field(default_factory=list)
    flag_transitions: list = field(default_factory=list)
    heal_events: list = field(default_factory=list)
    commit_counts: dict = field(default_factory=dict)
    reject_counts: dict = field(default_factory=dict)
    stealth_log: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    suppressed_rounds: int = 0
    forged_vote_rounds: int = 0
    max_vbar_error: float = 0.0
    max_delta: float = 0.0
    max_pu_spread: float = 0.0
    trigger_counts: list = field(default_factory=list)
    rounds: int = 0
    wall_clock: float = 0.0

    def as_dict(self):
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "notes": list(self.notes),
            "flag_transitions": [list(x) for x in self.flag_transitions],
            "heal_events": [
                {"agent": e.agent, "signal": e.signal, "t_trigger": e.t_trigger,
                 "donor": e.donor, "resume_at": e.resume_at, "resumed": e.resumed}
                for e in self.heal_events],
            "commit_counts": {str(k): v for k, v in self.commit_counts.items()},
            "reject_counts": {str(k): v for k, v in self.reject_counts.items()},
            "stealth_log": [list(x) for x in self.stealth_log],
            "errors": list(self.errors),
            "suppressed_rounds": self.suppressed_rounds,
            "forged_vote_rounds": self.forged_vote_rounds,
            "trigger_counts": list(self.trigger_counts),
            "rounds": self.rounds,
            "convergence": {
                "max_vbar_error": self.max_vbar_error,
                "max_delta": self.max_delta,
                "max_pu_spread": self.max_pu_spread,
            },
            "wall_clock": self.wall_clock,
        }


class _InFlight:
    """A sealed block (or raw payload in ledger-bypass mode) en route."""

    __slots__ = ("producer", "block", "payload", "deliveries", "close_t")

    def __init__(self, producer, block, payload, deliveries, close_t):
        self.producer = producer
        self.block = block
        self.payload = payload
        self.deliveries = deliveries      # recipient -> deliver_t or None (lost)
        self.close_t = close_t


class Simulation:
    """One scenario run; ``execute`` drives the round loop to t_end."""

    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.g = config.graph
        self.n = self.g.n
        sim = config.sim

        steps = sim.comm_dt / sim.dt
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError("comm_dt must be an integer multiple of dt")
        self.steps_per_round = int(round(steps))
        self.n_rounds = int(round(sim.t_end / sim.comm_dt))

        self.report = RunReport(scenario=config.name, seed=sim.seed,
                                notes=list(config.notes))

        root = np.random.SeedSequence(sim.seed)
        self.noise = MeasurementModel(self.n, sigma_w=sim.sigma_w,
                                      sigma_v=sim.sigma_v, seed=sim.seed)
        self.rng_channel = np.random.Generator(np.random.PCG64(root.spawn(3)[2]))

        self.network = ResistiveNetwork(config.plant)
        self.state = initial_state(config.plant, self.network)
        self.ctrl = ControllerBank(config.controller, self.g)
        self.pred = PredictorBank(config.predictor, self.n)
        self.det = DetectionState(config.detection, self.n)
        self.heal = HealState(validation_window=config.selfheal.validation_window,
                              event_threshold=config.selfheal.event_threshold)

        self.i_max = config.plant.i_max
        self.pub_mode = {k: NORMAL for k in range(self.n)}
        self.in_flight = []
        self._seq = 0

        self.stealth_specs = [a for a in config.attacks if a.kind == "stealth"]
        self.payload_specs = [a for a in config.attacks
                              if a.kind in ("fdi", "hijack", "stealth")]
        self.channel_specs = [a for a in config.attacks if a.kind in ("dos", "delay")]
        self.vote_specs = [a for a in config.attacks if a.kind == "forge_votes"]

        adist = attack_distribution_matrix(self.g)
        for spec in self.stealth_specs:
            if spec.vector is not None:
                flag = is_stealthy(adist, spec.vector)
                self.report.stealth_log.append(
                    (spec.start, "stealth" if flag else "balanced",
                     [float(x) for x in spec.vector]))

        columns = ["t"]
        for k in range(self.n):
            columns += [f"{f}_{k + 1}" for f in CSV_AGENT_FIELDS]
        self.series = TimeSeries(columns=columns)

        self._bootstrap_ledger()

    # -- initialization ------------------------------------------------------

    def _bootstrap_ledger(self):
        v_meas, i_meas = measure(self.state, self.noise)
        i_pu = i_meas / self.i_max
        self.ctrl.seed(0.0, v_meas, i_pu)
        det_v = self.ctrl.detection_signal()

        self.sealed = {}
        self.committed = {}          # producer -> list of (block, status)
        self.last_payload = {}       # last honestly committed payload
        self.last_round_idx = {}
        for k in range(self.n):
            payload = self._payload(k, v_meas, i_meas, i_pu, det_v)
            blk = lg.genesis_block(k, t=0.0, payload=payload)
            self.sealed[k] = [blk]
            self.committed[k] = [(blk, "committed")]
            self.last_payload[k] = payload
            self.last_round_idx[k] = 0
            for j in self.g.neighbors(k):
                self.ctrl.inbox_push(int(j), k, 0.0, payload["v_bar"], payload["i_pu"])

    def _payload(self, k, v_meas, i_meas, i_pu, det_v):
        return {
            "v_meas": float(v_meas[k]),
            "v_bar": float(self.ctrl.v_bar[k]),
            "i_amp": float(i_meas[k]),
            "i_pu": float(i_pu[k]),
            "det_v": float(det_v[k]),
            "delta": float(self.ctrl.delta[k]),
            "dm1_prev": float(self.det.dm1[k]),
            "dm2_prev": float(self.det.dm2[k]),
        }

    # -- round phases --------------------------------------------------------

    def _apply_payload_attacks(self, payloads, t):
        ctrl_p = self.config.controller
        for spec in self.payload_specs:
            if not spec.active(t):
                continue
            if spec.kind == "stealth" and spec.vector is not None:
                for k in payloads:
                    if spec.signal == "voltage":
                        payloads[k]["det_v"] += float(spec.vector[k])
                    else:
                        payloads[k]["i_amp"] += float(spec.vector[k])
                        payloads[k]["i_pu"] = payloads[k]["i_amp"] / float(self.i_max[k])
            elif spec.kind == "fdi":
                for k in spec.targets:
                    k = int(k)
                    if k not in payloads:
                        continue
                    if spec.signal == "current":
                        payloads[k]["i_amp"] += spec.magnitude
                        payloads[k]["i_pu"] = payloads[k]["i_amp"] / float(self.i_max[k])
                    else:
                        payloads[k]["v_bar"] += spec.magnitude
                        payloads[k]["det_v"] = ctrl_p.kp_h1 * (ctrl_p.v_ref
                                                               - payloads[k]["v_bar"])
            elif spec.kind == "hijack":
                for k in spec.targets:
                    k = int(k)
                    if k not in payloads:
                        continue
                    if spec.signal == "current":
                        payloads[k]["i_amp"] = ((1 - spec.zeta) * payloads[k]["i_amp"]
                                                + spec.magnitude)
                        payloads[k]["i_pu"] = payloads[k]["i_amp"] / float(self.i_max[k])
                    else:
                        payloads[k]["v_bar"] = ((1 - spec.zeta) * payloads[k]["v_bar"]
                                                + spec.magnitude)
                        payloads[k]["det_v"] = ctrl_p.kp_h1 * (ctrl_p.v_ref
                                                               - payloads[k]["v_bar"])

    def _schedule_deliveries(self, producer, t_seal, base_delay):
        """Per-recipient delivery times after loss/delay faults.

        Draws consume the channel stream in ascending recipient order so a
        fixed seed reproduces the run bit-exactly.
        """
        deliveries = {}
        for v in range(self.n):
            if v == producer:
                continue
            deliver_t = t_seal + base_delay
            lost = False
            for spec in self.channel_specs:
                if not spec.active(t_seal):
                    continue
                if spec.targets and not _channel_match(spec.targets, producer, v):
                    continue
                if spec.kind == "dos":
                    if spec.loss_p > 0.0 and self.rng_channel.random() < spec.loss_p:
                        lost = True
                    deliver_t += max(spec.magnitude, 0.0)
                else:
                    deliver_t += spec.magnitude
            deliveries[v] = None if lost else deliver_t
        return deliveries

    def _contract_metrics(self, producer, payload):
        nbrs = [int(j) for j in self.g.neighbors(producer)]
        weights = [float(self.g.adjacency[producer, j]) for j in nbrs]
        vals = [(self.last_payload[j]["det_v"], self.last_payload[j]["i_pu"])
                for j in nbrs]
        return self.det.evaluate(producer, payload["det_v"], payload["i_pu"],
                                 vals, weights)

    def _process_block(self, entry: _InFlight, armed):
        cfg = self.config
        blk = entry.block
        producer = entry.producer
        payload = entry.payload
        dm1, dm2 = self._contract_metrics(producer, payload)
        violated = self.det.violation(dm1, dm2)
        contract_live = cfg.ledger.contract and armed
        reason = violated if contract_live else None

        verdicts = {}
        chain_prefix = self.sealed[producer][:blk.height]
        base = lg.validate_block(blk, chain_prefix,
                                 contract=(lambda _b: reason) if reason else None)
        for v in range(self.n):
            if v != producer and entry.deliveries.get(v) is None:
                verdicts[v] = lg.REJECT       # missing vote counts as rejection
            else:
                verdicts[v] = base.decision

        for spec in self.vote_specs:
            if spec.active(entry.close_t):
                verdicts = forge_votes(verdicts, spec.controlled_nodes, spec.desired)
                self.report.forged_vote_rounds += 1

        n_a = sum(1 for d in verdicts.values() if d == lg.ACCEPT)
        n_r = len(verdicts) - n_a
        votes_pass = (n_a >= n_r) if cfg.ledger.tie_accepts else (n_a > n_r)

        # the physics contract is evaluated locally by every honest node and
        # cannot be outvoted: a violating payload never enters honest replicas
        committed = votes_pass and not (contract_live and violated)

        if committed:
            self.committed[producer].append((blk, "committed"))
            self.last_payload[producer] = dict(payload)
            self.report.commit_counts[producer] = \
                self.report.commit_counts.get(producer, 0) + 1
            for j in self.g.neighbors(producer):
                j = int(j)
                if entry.deliveries.get(j) is not None:
                    self.ctrl.inbox_push(j, producer, blk.txs[0].t,
                                         payload["v_bar"], payload["i_pu"])
        else:
            status = "rejected:" + (reason or ("votes" if not votes_pass
                                               else "physics_violation"))
            self.committed[producer].append((blk, status))
            self.report.reject_counts[producer] = \
                self.report.reject_counts.get(producer, 0) + 1

        if armed:
            self.det.record_round(producer, entry.close_t, dm1, dm2, violated)
        else:
            self.det.dm1[producer] = dm1
            self.det.dm2[producer] = dm2

    def _process_direct(self, entry: _InFlight, armed):
        """Ledger bypass: the raw transmitted payload reaches the inbox of
        every recipient whose delivery survived; no votes, no contract."""
        producer = entry.producer
        payload = entry.payload
        dm1, dm2 = self._contract_metrics(producer, payload)
        violated = self.det.violation(dm1, dm2)
        self.last_payload[producer] = dict(payload)
        for j in self.g.neighbors(producer):
            j = int(j)
            if entry.deliveries.get(j) is not None:
                self.ctrl.inbox_push(j, producer, entry.close_t - 0.0 + 0.0
                                     if False else entry.payload_t,
                                     payload["v_bar"], payload["i_pu"])
        if armed:
            self.det.record_round(producer, entry.close_t, dm1, dm2, violated)
        else:
            self.det.dm1[producer] = dm1
            self.det.dm2[producer] = dm2

    def _selfheal_phase(self, t):
        det, heal, g = self.det, self.heal, self.g
        flags = det.flag_vector()

        for k in det.flagged_agents():
            if heal.quarantined(k) or self.pub_mode[k] != NORMAL:
                continue
            self.pub_mode[k] = QUARANTINED
            try:
                donor = select_donor(k, flags, g)
            except AllNodesCompromised:
                self.report.errors.append(
                    f"t={t:.3f}: all nodes compromised; agent {k} cannot be healed")
                continue
            signal = det.flags[k].signal or "current"
            donor_value = (self.last_payload[donor]["i_pu"] if signal == "current"
                           else self.last_payload[donor]["v_bar"])
            rank = len(heal.active)
            heal.start(k, signal, t, donor, donor_value, rank)

        # refresh holds; neighbors of quarantined victims receive the
        # reconstruction instead of raw data
        for k in sorted(heal.active):
            ev = heal.active[k]
            donor_value = (self.last_payload[ev.donor]["i_pu"]
                           if ev.signal == "current"
                           else self.last_payload[ev.donor]["v_bar"])
            held = heal.refresh(k, t, donor_value)
            if self.pub_mode[k] == QUARANTINED:
                if ev.signal == "current":
                    recon_vbar, recon_ipu = self.last_payload[k]["v_bar"], held
                else:
                    recon_vbar, recon_ipu = held, self.last_payload[k]["i_pu"]
                for j in g.neighbors(k):
                    self.ctrl.inbox_push(int(j), k, t, recon_vbar, recon_ipu)

        # stepwise re-admission after a clean validation window
        for k in sorted(heal.active):
            ev = heal.active[k]
            if self.pub_mode[k] == QUARANTINED and t >= ev.resume_at - 1e-9:
                nbrs = [int(j) for j in g.neighbors(k)]
                weights = [float(g.adjacency[k, j]) for j in nbrs]
                vals = [(self.last_payload[j]["det_v"], self.last_payload[j]["i_pu"])
                        for j in nbrs]
                if ev.signal == "current":
                    cand = (self.last_payload[k]["det_v"], ev.held_value)
                else:
                    cand = (self.config.controller.kp_h1
                            * (self.config.controller.v_ref - ev.held_value),
                            self.last_payload[k]["i_pu"])
                dm1, dm2 = det.evaluate(k, cand[0], cand[1], vals, weights)
                if det.violation(dm1, dm2):
                    heal.postpone(k, heal.validation_window)
                else:
                    self.pub_mode[k] = RECONSTRUCTED
                    ev.resumed = True

        # flag cleared: back to normal publishing
        for k in list(heal.active):
            if not det.flags[k].flagged:
                heal.drop(k)
                self.pub_mode[k] = NORMAL

    def _override_with_reconstruction(self, payload, k):
        ev = self.heal.active[k]
        ctrl_p = self.config.controller
        if ev.signal == "current":
            payload["i_pu"] = ev.held_value
            payload["i_amp"] = ev.held_value * float(self.i_max[k])
        else:
            payload["v_bar"] = ev.held_value
            payload["det_v"] = ctrl_p.kp_h1 * (ctrl_p.v_ref - ev.held_value)

    # -- main loop -----------------------------------------------------------

    def execute(self):
        t0_wall = time.perf_counter()
        cfg = self.config
        sim = cfg.sim
        ctrl_p = cfg.controller
        n = self.n

        for r in range(1, self.n_rounds + 1):
            t_round = r * sim.comm_dt

            for _ in range(self.steps_per_round):
                self.state = step_plant(self.state, self.ctrl.v_star, cfg.plant,
                                        self.network, self.noise)

            v_meas, i_meas = measure(self.state, self.noise)
            i_pu = i_meas / self.i_max

            dv1_extra = np.zeros(n)
            for spec in self.stealth_specs:
                if spec.active(t_round) and spec.signal == "voltage" \
                        and spec.vector is not None:
                    dv1_extra += spec.vector

            def input_adjust(k, e1, delta):
                uv, ui = self.pred.apply(k, e1 / ctrl_p.v_ref, delta)
                return uv * ctrl_p.v_ref, ui

            self.ctrl.round_update(t_round, sim.comm_dt, v_meas, i_pu,
                                   input_adjust=input_adjust, dv1_extra=dv1_extra)

            rep = self.report
            rep.max_vbar_error = max(rep.max_vbar_error,
                                     float(np.max(np.abs(self.ctrl.v_bar - ctrl_p.v_ref))))
            rep.max_delta = max(rep.max_delta, float(np.max(np.abs(self.ctrl.delta))))
            rep.max_pu_spread = max(rep.max_pu_spread,
                                    float(np.max(i_pu) - np.min(i_pu)))

            det_v = self.ctrl.detection_signal()
            payloads = {k: self._payload(k, v_meas, i_meas, i_pu, det_v)
                        for k in range(n)}
            self._apply_payload_attacks(payloads, t_round)

            for k in range(n):
                if self.pub_mode[k] == RECONSTRUCTED and self.heal.quarantined(k):
                    self._override_with_reconstruction(payloads[k], k)

            base_delay = cfg.ledger.mining_delay if cfg.ledger.enabled else 0.0
            for k in range(n):
                if self.pub_mode[k] == QUARANTINED:
                    rep.suppressed_rounds += 1
                    continue
                deliveries = self._schedule_deliveries(k, t_round, base_delay)
                close_t = max([d for d in deliveries.values() if d is not None],
                              default=t_round + base_delay)
                if cfg.ledger.enabled:
                    tx = lg.make_transaction(k, r, t_round, payloads[k],
                                             self.last_round_idx[k])
                    self.last_round_idx[k] = r
                    blk = lg.seal_block([tx], self.sealed[k][-1].hash, k,
                                        height=len(self.sealed[k]), round_idx=r,
                                        seal_t=t_round, mining_delay=base_delay)
                    self.sealed[k].append(blk)
                    entry = _InFlight(k, blk, payloads[k], deliveries, close_t)
                else:
                    entry = _InFlight(k, None, payloads[k], deliveries, close_t)
                    entry.payload_t = t_round
                heapq.heappush(self.in_flight, (close_t, self._seq, entry))
                self._seq += 1

            armed = t_round >= cfg.detection.arm_time
            while self.in_flight and self.in_flight[0][0] <= t_round + 1e-9:
                _, _, entry = heapq.heappop(self.in_flight)
                if entry.block is not None:
                    self._process_block(entry, armed)
                else:
                    self._process_direct(entry, armed)

            if cfg.selfheal.enabled:
                self._selfheal_phase(t_round)

            e_volt_norm = (self.ctrl.v_star - v_meas) / ctrl_p.v_ref
            self.pred.end_of_round(t_round, e_volt_norm,
                                   (ctrl_p.v_ref - self.ctrl.v_bar) / ctrl_p.v_ref,
                                   self.ctrl.delta)

            flags = self.det.flag_vector()
            row = [t_round]
            for k in range(n):
                row += [self.state.v_out[k], self.state.i_out[k], i_pu[k],
                        self.ctrl.v_bar[k], self.ctrl.delta[k], self.ctrl.dv1[k],
                        self.ctrl.dv2[k], self.ctrl.v_star[k], self.det.dm1[k],
                        self.det.dm2[k], float(flags[k]),
                        float(self.heal.quarantined(k)),
                        self.pred.states[k].e_down,
                        float(self.pred.trigger_flags[k])]
            self.series.rows.append(row)

            if not np.all(np.isfinite(self.state.v_out)):
                raise NonFiniteState(f"diverged at t={t_round}")

        self.report.flag_transitions = list(self.det.transitions)
        self.report.heal_events = list(self.heal.events)
        self.report.trigger_counts = [int(c) for c in self.pred.trigger_counts]
        self.report.rounds = self.n_rounds
        self.report.wall_clock = time.perf_counter() - t0_wall
        return self.series, self.build_replicas(), self.report

    def build_replicas(self):
        """Identical honest replicas of every producer chain with commit
        status per block."""
        replicas = []
        for k in range(self.n):
            rep = lg.Replica(k, range(self.n))
            rep.status = {}
            for p in range(self.n):
                for blk, status in self.committed[p]:
                    rep.append(blk)
                    rep.status[blk.hash] = status
            replicas.append(rep)
        return replicas


def _channel_match(targets, src, dst):
    for pair in targets:
        a, b = int(pair[0]), int(pair[1])
        if (src, dst) in ((a, b), (b, a)):
            return True
    return False


def run_simulation(config: ScenarioConfig):
    """Execute one scenario; returns (TimeSeries, replicas, RunReport)."""
    return Simulation(config).execute()
