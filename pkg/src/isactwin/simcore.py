"""Deterministic simulation loop over an in-process publisher/subscriber bus.

Each timestep runs six phases under a barrier, in a fixed total order:

    state update -> ray tracing -> signal generation -> observation
                 -> state estimation -> control

so no observation at step t can see a stale pose, and identical
(config, seed) pairs produce byte-identical trace files.

Scenario file schema (JSON; paths are resolved relative to the file)::

    {
      "scene": "room.scene.json",
      "network": {
        "nodes": [{"id", "role": "tx|rx|txrx",
                   "array": {"elements", "spacing_wavelengths", "boresight_deg"},
                   "pose": {"position": [x, y, z], "yaw_deg"}}, ...],
        "edges": [["a", "b"], ...],
        "resources": {"users": [{"id", "subcarriers", "symbols", "power_w"}]}
      },
      "ofdm":   {"n_subcarriers", "delta_f_hz", "n_symbols", "carrier_hz"},
      "agents": [{"id", "initial_pose", "path", "controller"}],
      "noise":  {"state_var", "obs_var", "noise_power_w",
                 "fingerprint_snr_db" (optional), "map_offset_m" (optional)},
      "sim":    {"dt_s", "max_steps", "seed"},
      "raytrace": {"max_order"} (optional),
      "db":     {"path", "build": {"spacing_m", "bin_width_s", "num_bins",
                 "roi_m" (optional), "height_m" (optional)}},
      "output": {"trace_csv"}
    }

"subcarriers"/"symbols" may be explicit index lists or {"from", "to"}
(1-based, inclusive); "path" may be a waypoint list or
{"circle": {"center", "radius", "waypoints"}}.

Trace CSV columns, in order: step, time_s, agent_id, true_x, true_y,
true_yaw, est_x, est_y, loc_score, v_cmd, w_cmd, then one rate_<v>_<q>
column per communication link.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from collections import deque
from dataclasses import dataclass
from fnmatch import fnmatchcase
from pathlib import Path

import numpy as np

from . import agent as agent_mod
from . import localization as loc_mod
from .channel import OfdmParams, beamformed_gains, build_tx_signal, mrt_beamformer, synthesize_channel
from .network import (
    ArrayConfig,
    NetworkError,
    Node,
    ResourceRequest,
    allocate_resources,
    build_network,
    incoming_edges,
)
from .raytrace import Pose, relay_paths, trace_paths
from .scene import SceneError, floor_grid, load_scene, scene_hash


class ConfigError(ValueError):
    """Scenario document failed validation."""


# ---------------------------------------------------------------------------
# publisher/subscriber bus

@dataclass(frozen=True)
class Message:
    topic: str
    step: int
    publisher: str
    payload: object


class Subscription:
    """Queue of messages whose topics match the subscription pattern."""

    def __init__(self, pattern: str):
        self.pattern = pattern
        self._queue: deque = deque()

    def matches(self, topic: str) -> bool:
        return fnmatchcase(topic, self.pattern)

    def deliver(self, message: Message):
        self._queue.append(message)

    def pop(self):
        return self._queue.popleft() if self._queue else None

    def drain(self) -> list:
        out = list(self._queue)
        self._queue.clear()
        return out

    def __len__(self) -> int:
        return len(self._queue)


class Bus:
    """In-process topic bus; delivery preserves per-publisher publication order."""

    def __init__(self):
        self._subs: list = []

    def subscribe(self, pattern: str) -> Subscription:
        _check_topic(pattern, allow_wildcards=True)
        sub = Subscription(pattern)
        self._subs.append(sub)
        return sub

    def publish(self, topic: str, payload: object, step: int = 0, publisher: str = "sim") -> int:
        _check_topic(topic)
        msg = Message(topic=topic, step=step, publisher=publisher, payload=payload)
        count = 0
        for sub in self._subs:
            if sub.matches(topic):
                sub.deliver(msg)
                count += 1
        return count


def _check_topic(topic: str, allow_wildcards: bool = False):
    if not isinstance(topic, str) or not topic:
        raise ValueError("topic must be a nonempty string")
    if any(c.isspace() for c in topic):
        raise ValueError(f"malformed topic {topic!r}")
    if not allow_wildcards and any(c in topic for c in "*?["):
        raise ValueError(f"malformed topic {topic!r}")


# ---------------------------------------------------------------------------
# trace records

@dataclass(eq=False)
class AgentTrace:
    true_x: float
    true_y: float
    true_yaw: float
    est_x: float
    est_y: float
    loc_score: float
    v_cmd: float
    w_cmd: float
    dt_x: float | None = None  # twin pose when a map offset is injected
    dt_y: float | None = None


@dataclass(eq=False)
class TraceRecord:
    step: int
    time_s: float
    agents: dict          # agent id -> AgentTrace
    rates: dict           # (receiver id, transmitter id) -> bits/s/Hz
    rng_digest: str = ""


TRACE_BASE_COLUMNS = [
    "step", "time_s", "agent_id",
    "true_x", "true_y", "true_yaw",
    "est_x", "est_y", "loc_score",
    "v_cmd", "w_cmd",
]


# ---------------------------------------------------------------------------
# scenario configuration

@dataclass(eq=False)
class ControllerGains:
    k_ang: float = 2.0
    v_max: float = 0.2
    w_max: float = 1.5
    waypoint_tol: float = 0.05


@dataclass(eq=False)
class AgentSpec:
    id: str
    initial_pose: Pose
    waypoints: np.ndarray
    gains: ControllerGains


@dataclass(eq=False)
class NodeSpec:
    id: str
    role: str
    array: ArrayConfig | None
    pose: Pose | None


@dataclass(eq=False)
class NoiseSpec:
    state_var: float = 0.0
    obs_var: float = 0.0
    noise_power_w: float = 1e-12
    fingerprint_snr_db: float | None = None
    map_offset: tuple = (0.0, 0.0)


@dataclass(eq=False)
class DbBuildSpec:
    spacing: float = 0.05
    bin_width: float = 12.5e-9
    num_bins: int = 64
    roi: tuple | None = None     # (xmin, ymin, xmax, ymax)
    height: float | None = None  # defaults to the first agent's z


@dataclass(eq=False)
class DbSpec:
    path: Path | None = None
    build: DbBuildSpec | None = None


@dataclass(eq=False)
class ScenarioConfig:
    base_dir: Path
    scene_path: Path
    nodes: list
    edges: list
    requests: list
    ofdm: OfdmParams
    agents: list
    noise: NoiseSpec
    dt: float
    max_steps: int
    seed: int
    max_order: int
    db: DbSpec
    trace_csv: Path

    @classmethod
    def from_file(cls, path) -> "ScenarioConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"scenario file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"scenario file is not valid JSON: {exc}") from exc
        return cls.from_dict(doc, base_dir=path.parent)

    @classmethod
    def from_dict(cls, doc: dict, base_dir=Path(".")) -> "ScenarioConfig":
        base_dir = Path(base_dir)
        try:
            return cls._parse(doc, base_dir)
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"malformed scenario document: {exc}") from exc

    @classmethod
    def _parse(cls, doc: dict, base_dir: Path) -> "ScenarioConfig":
        ofdm_doc = doc["ofdm"]
        ofdm = OfdmParams(
            n_subcarriers=int(ofdm_doc["n_subcarriers"]),
            n_symbols=int(ofdm_doc["n_symbols"]),
            delta_f=float(ofdm_doc["delta_f_hz"]),
            carrier_freq=float(ofdm_doc["carrier_hz"]),
        )
        lam = ofdm.wavelength

        net = doc["network"]
        nodes = []
        for nd in net["nodes"]:
            array = None
            if nd.get("array") is not None:
                arr = nd["array"]
                array = ArrayConfig(
                    num_elements=int(arr["elements"]),
                    spacing=float(arr.get("spacing_wavelengths", 0.5)) * lam,
                    boresight=math.radians(float(arr.get("boresight_deg", 0.0))),
                )
            pose = _parse_pose(nd["pose"]) if nd.get("pose") is not None else None
            nodes.append(NodeSpec(id=str(nd["id"]), role=str(nd["role"]), array=array, pose=pose))

        edges = [tuple(e) for e in net["edges"]]

        requests = []
        for user in net.get("resources", {}).get("users", []):
            subs = _parse_index_set(user.get("subcarriers"), ofdm.n_subcarriers)
            syms = _parse_index_set(user.get("symbols"), ofdm.n_symbols)
            requests.append(
                ResourceRequest(
                    user=str(user["id"]),
                    subcarriers=subs,
                    symbols=syms,
                    power_budget=float(user.get("power_w", 1.0)),
                )
            )

        agents = []
        for ag in doc["agents"]:
            ctrl = ag.get("controller", {})
            gains = ControllerGains(
                k_ang=float(ctrl.get("k_ang", 2.0)),
                v_max=float(ctrl.get("v_max", 0.2)),
                w_max=float(ctrl.get("w_max", 1.5)),
                waypoint_tol=float(ctrl.get("waypoint_tol_m", 0.05)),
            )
            agents.append(
                AgentSpec(
                    id=str(ag["id"]),
                    initial_pose=_parse_pose(ag["initial_pose"]),
                    waypoints=_parse_path(ag["path"]),
                    gains=gains,
                )
            )

        noise_doc = doc.get("noise", {})
        offset = noise_doc.get("map_offset_m") or (0.0, 0.0)
        noise = NoiseSpec(
            state_var=float(noise_doc.get("state_var", 0.0)),
            obs_var=float(noise_doc.get("obs_var", 0.0)),
            noise_power_w=float(noise_doc.get("noise_power_w", 1e-12)),
            fingerprint_snr_db=(
                None if noise_doc.get("fingerprint_snr_db") is None
                else float(noise_doc["fingerprint_snr_db"])
            ),
            map_offset=(float(offset[0]), float(offset[1])),
        )

        sim = doc["sim"]
        db_doc = doc.get("db", {})
        build = None
        if db_doc.get("build") is not None:
            b = db_doc["build"]
            build = DbBuildSpec(
                spacing=float(b.get("spacing_m", 0.05)),
                bin_width=float(b.get("bin_width_s", 12.5e-9)),
                num_bins=int(b.get("num_bins", 64)),
                roi=tuple(float(x) for x in b["roi_m"]) if b.get("roi_m") else None,
                height=float(b["height_m"]) if b.get("height_m") is not None else None,
            )
        db = DbSpec(
            path=(base_dir / db_doc["path"]) if db_doc.get("path") else None,
            build=build,
        )

        return cls(
            base_dir=base_dir,
            scene_path=base_dir / doc["scene"],
            nodes=nodes,
            edges=edges,
            requests=requests,
            ofdm=ofdm,
            agents=agents,
            noise=noise,
            dt=float(sim["dt_s"]),
            max_steps=int(sim["max_steps"]),
            seed=int(sim.get("seed", 0)),
            max_order=int(doc.get("raytrace", {}).get("max_order", 2)),
            db=db,
            trace_csv=base_dir / doc.get("output", {}).get("trace_csv", "trace.csv"),
        )


def _parse_pose(doc: dict) -> Pose:
    pos = doc["position"]
    yaw = math.radians(float(doc.get("yaw_deg", 0.0)))
    return Pose.at(float(pos[0]), float(pos[1]), float(pos[2]), yaw=yaw)


def _parse_index_set(spec, upper: int) -> frozenset:
    if spec is None:
        return frozenset(range(1, upper + 1))
    if isinstance(spec, dict):
        return frozenset(range(int(spec["from"]), int(spec["to"]) + 1))
    return frozenset(int(i) for i in spec)


def _parse_path(spec) -> np.ndarray:
    if isinstance(spec, dict) and "circle" in spec:
        c = spec["circle"]
        return agent_mod.circle_waypoints(
            center=c["center"],
            radius=float(c["radius"]),
            count=int(c.get("waypoints", 16)),
            start_angle=math.radians(float(c.get("start_angle_deg", 0.0))),
        )
    return np.asarray(spec, dtype=float).reshape(-1, 2)


def validate_scenario(config: ScenarioConfig) -> list:
    """Total validation pass; returns human-readable violation strings."""
    problems = []
    if config.dt <= 0.0:
        problems.append(f"sim.dt_s must be > 0, got {config.dt}")
    if config.max_steps < 1:
        problems.append(f"sim.max_steps must be >= 1, got {config.max_steps}")
    if config.noise.noise_power_w <= 0.0:
        problems.append("noise.noise_power_w must be > 0")
    if config.noise.state_var < 0.0 or config.noise.obs_var < 0.0:
        problems.append("noise variances must be nonnegative")
    if config.max_order < 0:
        problems.append("raytrace.max_order must be >= 0")

    scene = None
    if not config.scene_path.is_file():
        problems.append(f"scene file not found: {config.scene_path}")
    else:
        try:
            scene = load_scene(config.scene_path)
        except SceneError as exc:
            problems.append(f"scene invalid: {exc}")

    node_ids = {n.id for n in config.nodes}
    try:
        _build_graph(config)
    except NetworkError as exc:
        problems.append(f"network invalid: {exc}")

    for req in config.requests:
        if req.user not in node_ids:
            problems.append(f"resources reference unknown node {req.user!r}")
    try:
        allocate_resources(config.requests, config.ofdm.n_subcarriers, config.ofdm.n_symbols)
    except NetworkError as exc:
        problems.append(f"resource allocation invalid: {exc}")

    if not config.agents:
        problems.append("no agents configured")
    for spec in config.agents:
        if spec.id not in node_ids:
            problems.append(f"agent {spec.id!r} has no matching network node")
        if len(spec.waypoints) == 0:
            problems.append(f"agent {spec.id!r} has an empty path")
        if scene is not None:
            pos = spec.initial_pose.position
            if np.any(pos < scene.bounds_min - 1e-9) or np.any(pos > scene.bounds_max + 1e-9):
                problems.append(f"agent {spec.id!r} starts outside the scene bounds")

    if config.db.path is None and config.db.build is None:
        problems.append("db section needs a path or build instructions")
    if config.db.path is not None and not config.db.path.is_file() and config.db.build is None:
        problems.append(f"database file not found and no build instructions: {config.db.path}")

    return problems


# ---------------------------------------------------------------------------
# fingerprint database plumbing

def _build_graph(config: ScenarioConfig):
    agent_poses = {a.id: a.initial_pose for a in config.agents}
    nodes = []
    for spec in config.nodes:
        pose = agent_poses.get(spec.id, spec.pose)
        nodes.append(
            Node(
                id=spec.id,
                is_tx=spec.role in ("tx", "txrx"),
                is_rx=spec.role in ("rx", "txrx"),
                array=spec.array,
                pose=pose,
            )
        )
    return build_network(nodes, config.edges)


def _static_aps(config: ScenarioConfig, graph) -> list:
    agent_ids = {a.id for a in config.agents}
    aps = []
    for node_id in sorted(graph.nodes):
        node = graph.nodes[node_id]
        if node.is_tx and not node.virtual_scatterer and node_id not in agent_ids:
            aps.append((node_id, node.pose))
    return aps


def db_signature(config: ScenarioConfig, graph) -> str:
    """Hash of everything that shapes the ray-traced fingerprints except the scene."""
    aps = [
        {"id": ap_id, "position": pose.position.tolist(), "yaw": pose.yaw}
        for ap_id, pose in _static_aps(config, graph)
    ]
    payload = {
        "aps": aps,
        "carrier_hz": config.ofdm.carrier_freq,
        "max_order": config.max_order,
    }
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def build_db_for_scenario(config: ScenarioConfig, out=None):
    """Build the fingerprint database of a scenario; returns (db, path or None)."""
    if config.db.build is None:
        raise ConfigError("scenario has no db.build instructions")
    build = config.db.build
    scene = load_scene(config.scene_path)
    graph = _build_graph(config)
    aps = _static_aps(config, graph)
    if not aps:
        raise ConfigError("no static transmitter nodes to fingerprint")
    height = build.height if build.height is not None else float(config.agents[0].initial_pose.position[2])
    grid = floor_grid(scene, build.spacing, height)
    if build.roi is not None:
        xmin, ymin, xmax, ymax = build.roi
        keep = (
            (grid[:, 0] >= xmin - 1e-9) & (grid[:, 0] <= xmax + 1e-9)
            & (grid[:, 1] >= ymin - 1e-9) & (grid[:, 1] <= ymax + 1e-9)
        )
        grid = grid[keep]
    db = loc_mod.build_fingerprint_db(
        scene,
        aps,
        grid,
        bin_width=build.bin_width,
        num_bins=build.num_bins,
        spacing=build.spacing,
        max_order=config.max_order,
        carrier_freq=config.ofdm.carrier_freq,
        scene_hash=scene_hash(scene),
        network_hash=db_signature(config, graph),
    )
    path = Path(out) if out is not None else config.db.path
    if path is not None:
        loc_mod.save_db(db, path)
    return db, path


def ensure_db(config: ScenarioConfig, scene, graph) -> loc_mod.FingerprintDB:
    """Load the scenario database, or build it if absent; guard against staleness."""
    if config.db.path is not None and config.db.path.is_file():
        db = loc_mod.load_db(config.db.path)
        if db.scene_hash and db.scene_hash != scene_hash(scene):
            raise loc_mod.DatabaseError(
                f"database {config.db.path} was built for a different scene"
            )
        if db.network_hash and db.network_hash != db_signature(config, graph):
            raise loc_mod.DatabaseError(
                f"database {config.db.path} was built for a different network setup"
            )
        return db
    db, _ = build_db_for_scenario(config)
    return db


# ---------------------------------------------------------------------------
# world state and the step loop

@dataclass(eq=False)
class _AgentRuntime:
    spec: AgentSpec
    state: agent_mod.AgentState
    odom: Pose
    control: agent_mod.Control
    noise: agent_mod.ProcessNoise
    progress: agent_mod.PathProgress


@dataclass(eq=False)
class World:
    config: ScenarioConfig
    scene: object
    graph: object
    allocation: object
    db: loc_mod.FingerprintDB
    bus: Bus
    agents: dict
    fp_rng: np.random.Generator
    finished: bool = False

    def comm_links(self) -> list:
        """(receiver agent, transmitter) pairs carrying data, sorted for determinism."""
        links = []
        for v in sorted(self.agents):
            for q in sorted(incoming_edges(self.graph, v)):
                if not self.graph.nodes[q].virtual_scatterer:
                    links.append((v, q))
        return links

    def sensing_links(self) -> list:
        links = []
        for v in sorted(self.agents):
            for q in sorted(incoming_edges(self.graph, v)):
                if self.graph.nodes[q].virtual_scatterer:
                    links.append((v, q))
        return links


def init_world(config: ScenarioConfig, bus: Bus | None = None) -> World:
    scene = load_scene(config.scene_path)
    graph = _build_graph(config)
    allocation = allocate_resources(config.requests, config.ofdm.n_subcarriers, config.ofdm.n_symbols)
    db = ensure_db(config, scene, graph)
    agents = {}
    for idx, spec in enumerate(sorted(config.agents, key=lambda a: a.id)):
        agents[spec.id] = _AgentRuntime(
            spec=spec,
            state=agent_mod.AgentState(pose=spec.initial_pose, t=0),
            odom=spec.initial_pose,
            control=agent_mod.Control(0.0, 0.0),
            noise=agent_mod.ProcessNoise(
                state_var=config.noise.state_var,
                obs_var=config.noise.obs_var,
                rng=np.random.default_rng([config.seed, 11, idx]),
            ),
            progress=agent_mod.PathProgress(index=0, done=False),
        )
    return World(
        config=config,
        scene=scene,
        graph=graph,
        allocation=allocation,
        db=db,
        bus=bus if bus is not None else Bus(),
        agents=agents,
        fp_rng=np.random.default_rng([config.seed, 13]),
    )


def sim_step(world: World, t: int) -> TraceRecord:
    """Advance all agents one timestep and emit the step's trace record."""
    cfg = world.config
    bus = world.bus

    # phase 1: state update with the past control command
    for aid in sorted(world.agents):
        rt = world.agents[aid]
        try:
            rt.state = agent_mod.step_state(rt.state, rt.control, rt.noise, cfg.dt)
            rt.odom = agent_mod.diff_drive_step(rt.odom, rt.control, cfg.dt)
        except ValueError as exc:
            raise RuntimeError(f"step {t} state phase failed for {aid!r}: {exc}") from exc
        bus.publish(f"agent/{aid}/state", rt.state, step=t, publisher=aid)

    # phase 2: refresh propagation parameters for all links
    pathsets = {}
    try:
        for v, q in world.comm_links():
            tx_node = world.graph.nodes[q]
            tx_pose = world.agents[q].state.pose if q in world.agents else tx_node.pose
            rx_pose = world.agents[v].state.pose
            pathsets[(v, q)] = trace_paths(
                world.scene, tx_pose, rx_pose,
                max_order=cfg.max_order, carrier_freq=cfg.ofdm.carrier_freq,
            )
            bus.publish(f"sim/channel/{v}/{q}", pathsets[(v, q)], step=t, publisher="sim")
        for v, s in world.sensing_links():
            node = world.graph.nodes[s]
            agent_pose = world.agents[v].state.pose
            inbound = trace_paths(world.scene, agent_pose, node.pose,
                                  max_order=cfg.max_order, carrier_freq=cfg.ofdm.carrier_freq)
            outbound = trace_paths(world.scene, node.pose, agent_pose,
                                   max_order=cfg.max_order, carrier_freq=cfg.ofdm.carrier_freq)
            pathsets[(v, s)] = relay_paths(inbound, outbound, node.reflection_coeff)
            bus.publish(f"sim/channel/{v}/{s}", pathsets[(v, s)], step=t, publisher="sim")
    except ValueError as exc:
        raise RuntimeError(f"step {t} raytrace phase failed: {exc}") from exc

    # phase 3: MIMO-OFDM signal generation and per-link rates
    rates = {}
    beamformers = {}
    try:
        # first pass: every link's beamformer, so interference sums see them all
        for v, q in world.comm_links():
            alloc = world.allocation.users.get(q)
            paths = pathsets[(v, q)]
            if alloc is None or len(paths) == 0:
                continue
            subs = sorted(alloc.subcarriers)
            syms = sorted(alloc.symbols)
            n_rep, k_rep = subs[len(subs) // 2], syms[0]
            h_rep = synthesize_channel(paths, world.graph.nodes[q].array,
                                       world.graph.nodes[v].array, n_rep, k_rep, cfg.ofdm)
            w = mrt_beamformer(h_rep)
            beamformers[(v, q)] = w
            build_tx_signal(1.0 + 0.0j, w, alloc.power(n_rep, k_rep), 1)
        for v, q in world.comm_links():
            alloc = world.allocation.users.get(q)
            if alloc is None or (v, q) not in beamformers:
                rates[(v, q)] = 0.0
                bus.publish(f"metrics/rate/{v}/{q}", 0.0, step=t, publisher="sim")
                continue
            subs = np.array(sorted(alloc.subcarriers))
            syms = np.array(sorted(alloc.symbols))
            gains = beamformed_gains(
                pathsets[(v, q)], world.graph.nodes[q].array, world.graph.nodes[v].array,
                beamformers[(v, q)], cfg.ofdm, subs, syms,
            )
            powers = _power_grid(alloc, subs, syms)
            interference = _interference_grid(world, v, q, subs, syms, pathsets, beamformers)
            snr = powers * gains / (cfg.noise.noise_power_w + interference)
            rates[(v, q)] = float(np.mean(np.log2(1.0 + snr)))
            bus.publish(f"metrics/rate/{v}/{q}", rates[(v, q)], step=t, publisher="sim")
    except ValueError as exc:
        raise RuntimeError(f"step {t} signal phase failed: {exc}") from exc

    # phases 4-6 per agent: observation, estimation, control
    agent_traces = {}
    offset = np.array([cfg.noise.map_offset[0], cfg.noise.map_offset[1], 0.0])
    has_offset = bool(np.any(offset != 0.0))
    for aid in sorted(world.agents):
        rt = world.agents[aid]
        pose = rt.state.pose

        # phase 4: measurement = fresh fingerprints at the twin's pose
        try:
            dt_position = pose.position + offset
            mdps = {}
            for ap_id in world.db.ap_ids:
                if has_offset or (aid, ap_id) not in pathsets:
                    ap_pose = world.graph.nodes[ap_id].pose
                    paths = trace_paths(world.scene, ap_pose, Pose(position=dt_position),
                                        max_order=cfg.max_order, carrier_freq=cfg.ofdm.carrier_freq)
                else:
                    paths = pathsets[(aid, ap_id)]
                mdp = loc_mod.compute_mdp(paths, world.db.bin_width, world.db.num_bins, ap_id=ap_id)
                if cfg.noise.fingerprint_snr_db is not None:
                    mdp = loc_mod.add_fingerprint_noise(mdp, cfg.noise.fingerprint_snr_db, world.fp_rng)
                mdps[ap_id] = mdp
            measurement = np.concatenate([mdps[a].bins for a in world.db.ap_ids])
            obs = agent_mod.observe(rt.state, measurement, rt.noise)
            bus.publish(f"agent/{aid}/obs", obs, step=t, publisher=aid)
        except ValueError as exc:
            raise RuntimeError(f"step {t} observation phase failed for {aid!r}: {exc}") from exc

        # phase 5: state estimation by fingerprint matching
        try:
            est, score = loc_mod.localize(mdps, world.db)
        except loc_mod.DatabaseError as exc:
            raise RuntimeError(f"step {t} estimation phase failed for {aid!r}: {exc}") from exc
        bus.publish(f"agent/{aid}/estimate", (est, score), step=t, publisher=aid)

        # phase 6: next control command toward the active waypoint
        gains_cfg = rt.spec.gains
        control, progress = agent_mod.waypoint_control(
            est, rt.odom.yaw, rt.spec.waypoints, rt.progress.index,
            k_ang=gains_cfg.k_ang, v_max=gains_cfg.v_max,
            w_max=gains_cfg.w_max, tol=gains_cfg.waypoint_tol,
        )
        rt.control = control
        rt.progress = progress
        bus.publish(f"agent/{aid}/control", control, step=t, publisher=aid)

        agent_traces[aid] = AgentTrace(
            true_x=float(pose.position[0]),
            true_y=float(pose.position[1]),
            true_yaw=pose.yaw,
            est_x=float(est[0]),
            est_y=float(est[1]),
            loc_score=score,
            v_cmd=control.v,
            w_cmd=control.omega,
            dt_x=float(dt_position[0]) if has_offset else None,
            dt_y=float(dt_position[1]) if has_offset else None,
        )

    world.finished = all(rt.progress.done for rt in world.agents.values())
    record = TraceRecord(
        step=t,
        time_s=t * cfg.dt,
        agents=agent_traces,
        rates=rates,
        rng_digest=_rng_digest(world),
    )
    bus.publish("sim/trace", record, step=t, publisher="sim")
    return record


def _power_grid(alloc, subs: np.ndarray, syms: np.ndarray) -> np.ndarray:
    if alloc.explicit_power is None:
        return np.full((len(subs), len(syms)), alloc.uniform_power)
    grid = np.zeros((len(subs), len(syms)))
    for i, n in enumerate(subs):
        for j, k in enumerate(syms):
            grid[i, j] = alloc.power(int(n), int(k))
    return grid


def _interference_grid(world, v, q, subs, syms, pathsets, beamformers) -> np.ndarray:
    """Received power from other transmitters overlapping (n, k) cells of link (v, q)."""
    total = np.zeros((len(subs), len(syms)))
    for (vv, qq), w in beamformers.items():
        if vv != v or qq == q:
            continue
        other = world.allocation.users.get(qq)
        if other is None:
            continue
        ov_n = np.isin(subs, sorted(other.subcarriers))
        ov_k = np.isin(syms, sorted(other.symbols))
        if not (ov_n.any() and ov_k.any()):
            continue
        gains = beamformed_gains(
            pathsets[(vv, qq)], world.graph.nodes[qq].array, world.graph.nodes[vv].array,
            w, world.config.ofdm, subs, syms,
        )
        powers = _power_grid(other, subs, syms) * np.outer(ov_n, ov_k)
        total += powers * gains
    return total


def _rng_digest(world: World) -> str:
    h = hashlib.sha256()
    for aid in sorted(world.agents):
        state = world.agents[aid].noise.rng.bit_generator.state
        h.update(json.dumps(state, sort_keys=True, default=int).encode())
    h.update(json.dumps(world.fp_rng.bit_generator.state, sort_keys=True, default=int).encode())
    return h.hexdigest()[:16]


def run_simulation(config: ScenarioConfig, trace_path=None, max_steps=None) -> list:
    """Run until every agent reaches its terminal waypoint or max steps elapse.

    The trace is streamed to CSV as it is produced (the file is valid after
    every step) and returned as a list of TraceRecords. Bit-reproducible for
    a fixed (config, seed).
    """
    problems = validate_scenario(config)
    if problems:
        raise ConfigError(problems[0] if len(problems) == 1 else "; ".join(problems))
    world = init_world(config)
    out_path = Path(trace_path) if trace_path is not None else config.trace_csv
    steps = config.max_steps if max_steps is None else int(max_steps)
    records = []
    with TraceWriter(out_path, world.comm_links()) as writer:
        for t in range(steps):
            record = sim_step(world, t)
            writer.write_record(record)
            records.append(record)
            if world.finished:
                break
    return records


# ---------------------------------------------------------------------------
# trace persistence

class TraceWriter:
    """Streaming CSV writer; flushes after every record so a crash leaves valid CSV."""

    def __init__(self, path, links):
        self.path = Path(path)
        self.links = list(links)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = self.path.open("w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(TRACE_BASE_COLUMNS + [f"rate_{v}_{q}" for v, q in self.links])
        self._fh.flush()

    def write_record(self, record: TraceRecord):
        for aid in sorted(record.agents):
            ag = record.agents[aid]
            row = [
                record.step, repr(float(record.time_s)), aid,
                repr(float(ag.true_x)), repr(float(ag.true_y)), repr(float(ag.true_yaw)),
                repr(float(ag.est_x)), repr(float(ag.est_y)), repr(float(ag.loc_score)),
                repr(float(ag.v_cmd)), repr(float(ag.w_cmd)),
            ]
            row += [repr(float(record.rates.get(link, 0.0))) for link in self.links]
            self._writer.writerow(row)
        self._fh.flush()

    def close(self):
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def record_trace(records, sink) -> Path:
    """Persist a list of TraceRecords to a CSV file path."""
    if not records:
        raise ValueError("no records to persist")
    links = sorted({link for rec in records for link in rec.rates})
    with TraceWriter(sink, links) as writer:
        for rec in records:
            try:
                writer.write_record(rec)
            except OSError as exc:
                raise OSError(f"trace write failed at step {rec.step}: {exc}") from exc
    return Path(sink)


def read_trace_csv(path) -> list:
    """Parse a trace CSV back into TraceRecords (rates keyed from the header)."""
    path = Path(path)
    records: dict = {}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or reader.fieldnames[: len(TRACE_BASE_COLUMNS)] != TRACE_BASE_COLUMNS:
            raise ValueError(f"{path}: unexpected trace columns")
        rate_cols = [c for c in reader.fieldnames if c.startswith("rate_")]
        for row in reader:
            step = int(row["step"])
            rec = records.get(step)
            if rec is None:
                rates = {}
                for col in rate_cols:
                    v, q = col[len("rate_"):].split("_", 1)
                    rates[(v, q)] = float(row[col])
                rec = TraceRecord(step=step, time_s=float(row["time_s"]), agents={}, rates=rates)
                records[step] = rec
            rec.agents[row["agent_id"]] = AgentTrace(
                true_x=float(row["true_x"]),
                true_y=float(row["true_y"]),
                true_yaw=float(row["true_yaw"]),
                est_x=float(row["est_x"]),
                est_y=float(row["est_y"]),
                loc_score=float(row["loc_score"]),
                v_cmd=float(row["v_cmd"]),
                w_cmd=float(row["w_cmd"]),
            )
    return [records[s] for s in sorted(records)]
