"""Closed-loop single-integrator world driven by per-robot CBF-QPs."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .controller import SafetyParams, TaskModel, build_constraints, nominal_control, solve_qp
from .errors import ConfigError, QPInfeasibleError
from .observer import Measurement

BUNDLED = ("corridor", "staggered", "four_robot_exchange")


@dataclass
class RobotSpec:
    start: np.ndarray
    goal: np.ndarray
    k_p: float = 1.0

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=float)
        self.goal = np.asarray(self.goal, dtype=float)


@dataclass
class UkfSettings:
    q: float = 1e-8
    r: float = 1e-6
    std_fraction: float = 0.25


@dataclass
class ScenarioConfig:
    name: str
    robots: list[RobotSpec]
    static_obstacles: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    safety: SafetyParams = field(default_factory=SafetyParams)
    dt: float = 0.02
    duration: float = 5.0
    theta0_box: tuple[float, float, float, float] = (-10.0, 10.0, -10.0, 10.0)
    seed: int = 0
    ukf: UkfSettings = field(default_factory=UkfSettings)
    description: str = ""

    def __post_init__(self):
        self.static_obstacles = np.asarray(self.static_obstacles, dtype=float).reshape(-1, 2)
        self.theta0_box = tuple(float(v) for v in self.theta0_box)

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))

    def validate(self) -> None:
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if not self.duration > 0:
            raise ConfigError("duration must be positive")
        if not self.robots:
            raise ConfigError("scenario has no robots")
        xmin, xmax, ymin, ymax = self.theta0_box
        if not (xmax > xmin and ymax > ymin):
            raise ConfigError("theta0_box is degenerate")
        for i, r in enumerate(self.robots):
            if r.start.shape != (2,) or r.goal.shape != (2,):
                raise ConfigError(f"robot {i}: start and goal must be 2-vectors")
            if not r.k_p > 0:
                raise ConfigError(f"robot {i}: k_p must be positive")
            if not (xmin <= r.goal[0] <= xmax and ymin <= r.goal[1] <= ymax):
                raise ConfigError(f"robot {i}: goal outside theta0_box")
        pts = np.vstack([[r.start for r in self.robots], self.static_obstacles])
        n = len(self.robots)
        for i in range(n):
            for j in range(i + 1, len(pts)):
                if np.linalg.norm(pts[i] - pts[j]) <= self.safety.D_s:
                    raise ConfigError(f"initial separation of robot {i} and entity {j} is not above D_s")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "robots": [{"start": r.start.tolist(), "goal": r.goal.tolist(), "k_p": r.k_p} for r in self.robots],
            "static_obstacles": self.static_obstacles.tolist(),
            "safety": {"D_s": self.safety.D_s, "gamma": self.safety.gamma, "epsilon": self.safety.epsilon},
            "dt": self.dt,
            "duration": self.duration,
            "theta0_box": list(self.theta0_box),
            "seed": self.seed,
            "ukf": {"q": self.ukf.q, "r": self.ukf.r, "std_fraction": self.ukf.std_fraction},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        try:
            robots = [RobotSpec(r["start"], r["goal"], float(r.get("k_p", 1.0))) for r in d["robots"]]
            cfg = cls(
                name=str(d.get("name", "scenario")),
                description=str(d.get("description", "")),
                robots=robots,
                static_obstacles=d.get("static_obstacles", []),
                safety=SafetyParams(**d.get("safety", {})),
                dt=float(d.get("dt", 0.02)),
                duration=float(d.get("duration", 5.0)),
                theta0_box=tuple(d.get("theta0_box", (-10.0, 10.0, -10.0, 10.0))),
                seed=int(d.get("seed", 0)),
                ukf=UkfSettings(**d.get("ukf", {})),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"bad scenario: {e}") from e
        return cfg


def load_scenario(path_or_name: str | Path) -> ScenarioConfig:
    """Load a scenario JSON file, or a bundled scenario by name."""
    p = Path(path_or_name)
    if p.suffix == ".json" and p.exists():
        text = p.read_text()
    elif str(path_or_name).removesuffix(".json") in BUNDLED:
        name = str(path_or_name).removesuffix(".json")
        text = resources.files("regionid.scenarios").joinpath(f"{name}.json").read_text()
    else:
        raise ConfigError(f"scenario not found: {path_or_name}")
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"scenario is not valid JSON: {e}") from e
    return ScenarioConfig.from_dict(d)


@dataclass
class WorldState:
    t: float
    positions: np.ndarray
    last_controls: np.ndarray


@dataclass
class SimLog:
    config: ScenarioConfig
    times: np.ndarray           # (T,)
    positions: np.ndarray       # (T + 1, N, 2)
    controls: np.ndarray        # (T, N, 2)
    active_counts: np.ndarray   # (T, N)
    measurements: list[list[Measurement]]

    def min_separation(self) -> float:
        """Smallest robot-robot or robot-obstacle distance over the run."""
        P = self.positions
        n = P.shape[1]
        best = np.inf
        for i in range(n):
            for j in range(i + 1, n):
                best = min(best, float(np.min(np.linalg.norm(P[:, i] - P[:, j], axis=1))))
            obs = self.config.static_obstacles
            if len(obs):
                dist = np.linalg.norm(P[:, i, None, :] - obs[None, :, :], axis=2)
                best = min(best, float(dist.min()))
        return best


def obstacles_for(i: int, positions: np.ndarray, static_obstacles: np.ndarray) -> np.ndarray:
    """What robot ``i`` avoids: the other robots (index order), then the static obstacles."""
    others = np.delete(positions, i, axis=0)
    return np.vstack([others, static_obstacles]) if len(static_obstacles) else others


def initial_world(cfg: ScenarioConfig) -> WorldState:
    pos = np.array([r.start for r in cfg.robots], dtype=float)
    return WorldState(0.0, pos, np.zeros_like(pos))


def robot_controls(ws: WorldState, cfg: ScenarioConfig):
    """Per-robot QP solutions against one snapshot of positions."""
    sols = []
    for i, r in enumerate(cfg.robots):
        obs = obstacles_for(i, ws.positions, cfg.static_obstacles)
        cs = build_constraints(ws.positions[i], obs, cfg.safety)
        u_hat = nominal_control(TaskModel(r.k_p, r.goal), ws.positions[i])
        try:
            sols.append((obs, solve_qp(u_hat, cs)))
        except QPInfeasibleError as e:
            raise QPInfeasibleError(f"robot {i} at t={ws.t:.4f}: {e}") from e
    return sols


def step_world(ws: WorldState, cfg: ScenarioConfig) -> WorldState:
    """Explicit Euler step ``x <- x + u* dt`` for all robots at once."""
    sols = robot_controls(ws, cfg)
    u = np.array([s.u_star for _, s in sols])
    return WorldState(ws.t + cfg.dt, ws.positions + cfg.dt * u, u)


def run_scenario(cfg: ScenarioConfig) -> SimLog:
    cfg.validate()
    ws = initial_world(cfg)
    T, N = cfg.n_steps, len(cfg.robots)
    times = np.empty(T)
    positions = np.empty((T + 1, N, 2))
    controls = np.empty((T, N, 2))
    active = np.empty((T, N), dtype=int)
    meas: list[list[Measurement]] = [[] for _ in range(N)]
    positions[0] = ws.positions
    for k in range(T):
        t = k * cfg.dt
        ws.t = t
        sols = robot_controls(ws, cfg)
        u = np.array([s.u_star for _, s in sols])
        for i, (obs, s) in enumerate(sols):
            meas[i].append(Measurement(t, ws.positions[i].copy(), s.u_star.copy(), obs.copy()))
            active[k, i] = len(s.active_indices)
        times[k] = t
        controls[k] = u
        ws = WorldState(t + cfg.dt, ws.positions + cfg.dt * u, u)
        positions[k + 1] = ws.positions
    return SimLog(cfg, times, positions, controls, active, meas)


def random_scenario(seed: int, n_robots: int | None = None, n_obstacles: int | None = None) -> ScenarioConfig:
    """A random, valid scenario in a 10 m arena (used for property checks)."""
    rng = np.random.default_rng(seed)
    n_robots = int(rng.integers(1, 4)) if n_robots is None else n_robots
    n_obstacles = int(rng.integers(2, 7)) if n_obstacles is None else n_obstacles
    D_s = 0.5
    pts: list[np.ndarray] = []

    def sample(xlo, xhi, ylo, yhi):
        for _ in range(1000):
            p = rng.uniform((xlo, ylo), (xhi, yhi))
            if all(np.linalg.norm(p - q) > 2.5 * D_s for q in pts):
                pts.append(p)
                return p
        raise RuntimeError("could not place entity")

    starts = [sample(-4.5, -1.0, -4.5, -1.0) for _ in range(n_robots)]
    obstacles = [sample(-1.0, 2.0, -4.0, 4.0) for _ in range(n_obstacles)]
    goals = [rng.uniform(2.5, 4.5, size=2) * np.array([1.0, rng.choice([-1.0, 1.0])]) for _ in range(n_robots)]
    robots = [RobotSpec(s, g, float(rng.uniform(0.5, 2.0))) for s, g in zip(starts, goals)]
    return ScenarioConfig(
        name=f"random-{seed}",
        robots=robots,
        static_obstacles=np.array(obstacles),
        safety=SafetyParams(D_s=D_s, gamma=float(rng.uniform(1.0, 4.0))),
        dt=0.02,
        duration=4.0,
        theta0_box=(-5.0, 5.0, -5.0, 5.0),
        seed=seed,
    )
