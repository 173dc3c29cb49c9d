"""Scenario files: declarative description of one co-simulation run.

Scenarios are TOML documents with named sections; every section except
[graph] may be omitted and is then filled from defaults (each applied
default is logged in the returned config's ``notes``).

    [graph]      edges = [[i, j, weight], ...]          (required)
    [plant]      agent_bus, n_bus, lines, load table, converter limits
    [controller] nominal voltage and PI gains
    [ledger]     enabled, mining_delay, contract, tie_accepts
    [detection]  metric gains, thresholds, debounce, arm_time
    [selfheal]   enabled, validation_window, event_threshold
    [predictor]  enabled, d, b, alpha, k1, k2, t_loop
    [[attacks]]  kind, signal, targets, start, stop, magnitude, ...
    [sim]        t_end, dt, comm_dt, seed
    [output]     csv, ledger_dir, plots
"""

import importlib.resources as resources
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:             # Python 3.10
    import tomli as tomllib

from .attacks import ATTACK_KINDS, AttackSpec
from .control import ControllerParams
from .detection import DetectionParams
from .errors import DanglingAgentReference, ScenarioError, UnknownAttackKind
from .plant import PlantParams
from .predictor import PredictorParams
from .topology import GraphTopology, build_graph


@dataclass
class LedgerOptions:
    enabled: bool = True
    mining_delay: float = 0.0
    contract: bool = True
    tie_accepts: bool = False


@dataclass
class HealOptions:
    enabled: bool = True
    validation_window: float = 0.15
    event_threshold: float = 0.01


@dataclass
class SimOptions:
    t_end: float = 5.0
    dt: float = 1e-4
    comm_dt: float = 1e-3
    seed: int = 0
    sigma_w: float = 0.0
    sigma_v: float = 0.0


@dataclass
class OutputOptions:
    csv: str = "timeseries.csv"
    ledger_dir: str = "ledger"
    report: str = "report.json"
    plots: bool = False


@dataclass
class ScenarioConfig:
    graph: GraphTopology
    plant: PlantParams
    controller: ControllerParams
    detection: DetectionParams
    ledger: LedgerOptions
    selfheal: HealOptions
    predictor: PredictorParams
    attacks: list
    sim: SimOptions
    output: OutputOptions
    name: str = "scenario"
    notes: list = field(default_factory=list)


def _as_float_list(value, n, what):
    if isinstance(value, (int, float)):
        return np.full(n, float(value))
    arr = np.asarray(value, dtype=float)
    if arr.shape != (n,):
        raise ScenarioError(f"{what} must be a scalar or a list of {n} values",
                            section="plant", field=what)
    return arr


def load_scenario(path) -> ScenarioConfig:
    """Parse and validate a scenario file, applying logged defaults."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ScenarioError(f"scenario file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"cannot parse {path.name}: {exc}")
    return scenario_from_dict(doc, name=path.stem)


def scenario_from_dict(doc, name="scenario") -> ScenarioConfig:
    notes = []

    def section(key, required=False):
        if key not in doc:
            if required:
                raise ScenarioError(f"missing required section [{key}]", section=key)
            notes.append(f"section [{key}] absent; defaults applied")
            return {}
        return doc[key]

    g_sec = section("graph", required=True)
    edges = g_sec.get("edges")
    if not edges:
        raise ScenarioError("graph.edges must list at least one edge",
                            section="graph", field="edges")
    n = 1 + max(max(int(e[0]), int(e[1])) for e in edges)
    adj = np.zeros((n, n))
    for e in edges:
        if len(e) == 2:
            i, j, w = int(e[0]), int(e[1]), 1.0
            notes.append(f"edge ({i},{j}) weight defaulted to 1.0")
        else:
            i, j, w = int(e[0]), int(e[1]), float(e[2])
        adj[i, j] = w
        adj[j, i] = w
    graph = build_graph(adj)

    p_sec = section("plant")
    agent_bus = [int(b) for b in p_sec.get("agent_bus", list(range(n)))]
    lines = [(int(a), int(b), float(r)) for a, b, r in p_sec.get("lines", [])]
    if not lines:
        raise ScenarioError("plant.lines must list the tie-line resistances",
                            section="plant", field="lines")
    n_bus = p_sec.get("n_bus", 1 + max(max(a, b) for a, b, _ in lines))
    load_rows = p_sec.get("load", [])
    if not load_rows:
        raise ScenarioError("plant.load must give at least one load entry",
                            section="plant", field="load")
    schedule = {}
    for row in load_rows:
        t0 = float(row.get("t", 0.0))
        schedule.setdefault(t0, {})[int(row["bus"])] = float(row["conductance"])
    # later entries override earlier ones per bus; carry forward unchanged loads
    times = sorted(schedule)
    merged, current = [], {}
    for t0 in times:
        current = {**current, **schedule[t0]}
        merged.append((t0, dict(current)))

    sim_sec = section("sim")
    sim = SimOptions(
        t_end=float(sim_sec.get("t_end", 5.0)),
        dt=float(sim_sec.get("dt", 1e-4)),
        comm_dt=float(sim_sec.get("comm_dt", 1e-3)),
        seed=int(sim_sec.get("seed", 0)),
        sigma_w=float(sim_sec.get("sigma_w", 0.0)),
        sigma_v=float(sim_sec.get("sigma_v", 0.0)),
    )
    if sim.t_end <= 0.0:
        raise ScenarioError("sim.t_end must be positive", section="sim", field="t_end")

    c_sec = section("controller")
    v_ref = float(c_sec.get("v_ref", 315.0))
    i_max = _as_float_list(p_sec.get("i_max", 28.0), n, "i_max")

    plant = PlantParams(
        n_agents=n,
        agent_bus=agent_bus,
        n_bus=int(n_bus),
        line_edges=lines,
        load_schedule=merged,
        i_max=i_max,
        i_min=_as_float_list(p_sec.get("i_min", 0.0), n, "i_min"),
        v_min=float(p_sec.get("v_min", 270.0)),
        v_max=float(p_sec.get("v_max", 360.0)),
        v_ref=v_ref,
        tracking_tau=float(p_sec.get("tracking_tau", 5e-3)),
        dt=sim.dt,
        l_se=_as_float_list(p_sec.get("l_se", 3e-3), n, "l_se"),
        c_dc=_as_float_list(p_sec.get("c_dc", 250e-6), n, "c_dc"),
        rating=_as_float_list(p_sec.get("rating", 1e4), n, "rating"),
        rlc_mode=bool(p_sec.get("rlc_mode", False)),
    )

    controller = ControllerParams(
        v_ref=v_ref,
        v_min=plant.v_min,
        v_max=plant.v_max,
        i_max=i_max,
        kp_h1=float(c_sec.get("kp_h1", 1.92)),
        ki_h1=float(c_sec.get("ki_h1", 15.0)),
        kp_h2=float(c_sec.get("kp_h2", 4.5)),
        ki_h2=float(c_sec.get("ki_h2", 0.08)),
        c=float(c_sec.get("c", 1.4)),
        i_ref=float(c_sec.get("i_ref", 0.0)),
        comm_delay_tau=float(c_sec.get("comm_delay_tau", 0.0)),
    )

    d_sec = section("detection")
    detection = DetectionParams(
        h_k=float(d_sec.get("h_k", 2.5)),
        c_k=float(d_sec.get("c_k", 1.4)),
        upsilon1=float(d_sec.get("upsilon1", 0.025)),
        upsilon2=float(d_sec.get("upsilon2", 0.035)),
        debounce=int(d_sec.get("debounce", 3)),
        clear_window=int(d_sec.get("clear_window", 150)),
        arm_time=float(d_sec.get("arm_time", 0.5)),
    )

    l_sec = section("ledger")
    ledger = LedgerOptions(
        enabled=bool(l_sec.get("enabled", True)),
        mining_delay=float(l_sec.get("mining_delay", 0.0)),
        contract=bool(l_sec.get("contract", True)),
        tie_accepts=bool(l_sec.get("tie_accepts", False)),
    )

    h_sec = section("selfheal")
    selfheal = HealOptions(
        enabled=bool(h_sec.get("enabled", True)),
        validation_window=float(h_sec.get("validation_window", 0.15)),
        event_threshold=float(h_sec.get("event_threshold", 0.01)),
    )

    pr_sec = section("predictor")
    predictor = PredictorParams(
        enabled=bool(pr_sec.get("enabled", False)),
        d=int(pr_sec.get("d", 4)),
        b=int(pr_sec.get("b", 8)),
        alpha=float(pr_sec.get("alpha", 1.2)),
        t_loop=float(pr_sec.get("t_loop", controller.kp_h1 / controller.ki_h1
                                 if controller.ki_h1 > 0 else 0.128)),
        k1=float(pr_sec.get("k1", 1.0)),
        k2=float(pr_sec.get("k2", 1.0)),
        trigger_floor=float(pr_sec.get("trigger_floor", 1e-3)),
    )

    attacks = []
    for i, a_sec in enumerate(doc.get("attacks", [])):
        kind = a_sec.get("kind")
        if kind not in ATTACK_KINDS:
            raise UnknownAttackKind(f"attack #{i}: unknown kind {kind!r}",
                                    section="attacks", field="kind")
        targets = a_sec.get("targets", [])
        spec = AttackSpec(
            kind=kind,
            start=float(a_sec.get("start", 0.0)),
            stop=float(a_sec.get("stop", sim.t_end)),
            targets=targets,
            magnitude=float(a_sec.get("magnitude", 0.0)),
            vector=a_sec.get("vector"),
            zeta=int(a_sec.get("zeta", 1)),
            loss_p=float(a_sec.get("loss_p", 0.0)),
            signal=a_sec.get("signal", "current"),
            controlled_nodes=[int(x) for x in a_sec.get("controlled_nodes", [])],
            desired=a_sec.get("desired", "accept"),
            suppress_self_report=bool(a_sec.get("suppress_self_report", False)),
        )
        _check_attack_refs(spec, n, i)
        attacks.append(spec)

    o_sec = section("output")
    output = OutputOptions(
        csv=o_sec.get("csv", "timeseries.csv"),
        ledger_dir=o_sec.get("ledger_dir", "ledger"),
        report=o_sec.get("report", "report.json"),
        plots=bool(o_sec.get("plots", False)),
    )

    if any(b >= plant.n_bus for b in agent_bus):
        raise DanglingAgentReference("agent_bus references a bus beyond n_bus",
                                     section="plant", field="agent_bus")
    if len(agent_bus) != n:
        raise DanglingAgentReference(
            f"plant.agent_bus lists {len(agent_bus)} buses for {n} agents",
            section="plant", field="agent_bus")

    return ScenarioConfig(graph=graph, plant=plant, controller=controller,
                          detection=detection, ledger=ledger, selfheal=selfheal,
                          predictor=predictor, attacks=attacks, sim=sim,
                          output=output, name=name, notes=notes)


def _check_attack_refs(spec: AttackSpec, n, idx):
    if spec.kind in ("stealth",):
        if spec.vector is not None and len(spec.vector) != n:
            raise DanglingAgentReference(
                f"attack #{idx}: stealth vector length {len(spec.vector)} != {n} agents",
                section="attacks", field="vector")
    if spec.kind in ("fdi", "hijack"):
        for t in spec.targets:
            if not 0 <= int(t) < n:
                raise DanglingAgentReference(
                    f"attack #{idx}: target agent {t} does not exist",
                    section="attacks", field="targets")
    if spec.kind in ("dos", "delay"):
        for pair in spec.targets:
            if (not isinstance(pair, (list, tuple)) or len(pair) != 2
                    or not all(0 <= int(x) < n for x in pair)):
                raise DanglingAgentReference(
                    f"attack #{idx}: channel {pair!r} must be a valid agent pair",
                    section="attacks", field="targets")
    if spec.kind == "forge_votes":
        for t in spec.controlled_nodes:
            if not 0 <= int(t) < n:
                raise DanglingAgentReference(
                    f"attack #{idx}: controlled node {t} does not exist",
                    section="attacks", field="controlled_nodes")


def bundled_scenarios():
    """Names of the scenario files shipped inside the package."""
    pkg = resources.files("gridledger") / "scenarios"
    return sorted(p.name[:-5] for p in pkg.iterdir() if p.name.endswith(".toml"))


def bundled_scenario_path(name):
    pkg = resources.files("gridledger") / "scenarios"
    p = pkg / f"{name}.toml"
    if not p.is_file():
        raise ScenarioError(f"no bundled scenario named {name!r}; "
                            f"available: {', '.join(bundled_scenarios())}")
    return p
