"""Command-line driver: simulate, identify, compare, render.

Exit codes: 0 ok, 2 bad configuration or input, 3 parameter region became
empty, 4 a robot QP was infeasible.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContradictionError, NoDataError, QPInfeasibleError
from .observer import Measurement, ObserverConfig, init_estimate, step
from .polytope import contains
from .sim import ScenarioConfig, SimLog, load_scenario, random_scenario, run_scenario
from .ukf import initial_state, ukf_step

log = logging.getLogger("regionid")

OUT_DIR_ENV = "REGIONID_OUT_DIR"
EXIT_OK, EXIT_CONFIG, EXIT_CONTRADICTION, EXIT_INFEASIBLE = 0, 2, 3, 4


@dataclass
class RobotReport:
    robot: int
    goal: list[float]
    times: list[float] = field(default_factory=list)
    area_history: list[float] = field(default_factory=list)
    ukf_error_history: list[float] = field(default_factory=list)
    contains_true_theta: list[bool] = field(default_factory=list)
    case_timeline: list[str | None] = field(default_factory=list)
    contradiction: str | None = None


@dataclass
class RunReport:
    command: str
    scenario: str
    robots: list[RobotReport] = field(default_factory=list)
    artifacts: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------- helpers

def _out_dir(args) -> Path:
    d = Path(args.out_dir or os.environ.get(OUT_DIR_ENV) or "regionid_out")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _scenario(args) -> ScenarioConfig:
    if args.scenario == "random":
        cfg = random_scenario(args.seed if args.seed is not None else 0)
    else:
        cfg = load_scenario(args.scenario)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.dt is not None:
        cfg.dt = args.dt
    if args.epsilon is not None:
        try:
            cfg.safety = replace(cfg.safety, epsilon=args.epsilon)
        except ValueError as e:
            raise ConfigError(str(e)) from e
    cfg.validate()
    return cfg


def _observer_config(args, cfg: ScenarioConfig, k_p: float) -> ObserverConfig:
    try:
        return ObserverConfig(
            k_p=k_p,
            safety=cfg.safety,
            theta0_box=cfg.theta0_box,
            rank_tol=args.rank_tol if args.rank_tol is not None else ObserverConfig.rank_tol,
            cadence=args.cadence,
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_jsonl(path: Path, records) -> None:
    with path.open("w") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")


def _write_sim_logs(out: Path, cfg: ScenarioConfig, sim: SimLog) -> list[str]:
    (out / "scenario.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    rows = []
    for k, t in enumerate(sim.times):
        for i in range(len(cfg.robots)):
            p, u = sim.positions[k, i], sim.controls[k, i]
            rows.append([repr(float(t)), i, repr(float(p[0])), repr(float(p[1])),
                         repr(float(u[0])), repr(float(u[1])), int(sim.active_counts[k, i])])
    _write_csv(out / "trace.csv", ["t", "robot", "x", "y", "ux", "uy", "active"], rows)
    _write_jsonl(out / "measurements.jsonl",
                 ({"robot": i, **m.to_dict()} for i, ms in enumerate(sim.measurements) for m in ms))
    return [str(out / n) for n in ("scenario.json", "trace.csv", "measurements.jsonl")]


def _read_sim_logs(d: Path) -> tuple[ScenarioConfig, list[list[Measurement]]]:
    try:
        cfg = ScenarioConfig.from_dict(json.loads((d / "scenario.json").read_text()))
        streams: list[list[Measurement]] = [[] for _ in cfg.robots]
        with (d / "measurements.jsonl").open() as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    streams[int(rec["robot"])].append(Measurement.from_dict(rec))
    except (OSError, json.JSONDecodeError, KeyError, IndexError) as e:
        raise ConfigError(f"cannot read simulation logs in {d}: {e}") from e
    return cfg, streams


# ------------------------------------------------------ per-robot pipeline

def _robot_pipeline(job: tuple) -> tuple[RobotReport, list[dict], list[list]]:
    """Observer (and optionally UKF) over one robot's stream. Runs in workers."""
    i, cfg_d, ocfg_kw, stream_d, with_ukf = job
    cfg = ScenarioConfig.from_dict(cfg_d)
    robot = cfg.robots[i]
    ocfg = ObserverConfig(safety=cfg.safety, theta0_box=cfg.theta0_box, **ocfg_kw)
    stream = [Measurement.from_dict(m) for m in stream_d]
    est = init_estimate(ocfg)
    rep = RobotReport(i, robot.goal.tolist())
    ukf_rows: list[list] = []
    st = initial_state(cfg.theta0_box, Q=cfg.ukf.q * np.eye(2), R=cfg.ukf.r * np.eye(2),
                       std_fraction=cfg.ukf.std_fraction) if with_ukf else None
    for m in stream:
        try:
            step(est, m, ocfg)
        except ContradictionError as e:
            rep.contradiction = str(e)
            break
        rec = est.omega_log[-1]
        rep.times.append(m.t)
        rep.area_history.append(rec.area)
        rep.case_timeline.append(rec.case_id)
        rep.contains_true_theta.append(contains(est.theta_polygon, robot.goal, 1e-6))
        if st is not None:
            st = ukf_step(st, m, ocfg.k_p, cfg.safety)
            err = float(np.linalg.norm(st.mean - robot.goal))
            rep.ukf_error_history.append(err)
            ukf_rows.append([repr(m.t), repr(float(st.mean[0])), repr(float(st.mean[1])),
                             repr(float(np.trace(st.covariance))), repr(err)])
    records = [r.to_dict() for r in est.omega_log]
    return rep, records, ukf_rows


def _identify(args, cfg: ScenarioConfig, streams, out: Path, with_ukf: bool, report: RunReport) -> int:
    jobs = []
    for i, r in enumerate(cfg.robots):
        ocfg = _observer_config(args, cfg, r.k_p)
        kw = dict(k_p=ocfg.k_p, rank_tol=ocfg.rank_tol, cadence=ocfg.cadence)
        jobs.append((i, cfg.to_dict(), kw, [m.to_dict() for m in streams[i]], with_ukf))
    if args.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_robot_pipeline, jobs))
    else:
        results = [_robot_pipeline(j) for j in jobs]

    code = EXIT_OK
    for rep, records, ukf_rows in results:
        i = rep.robot
        report.robots.append(rep)
        p = out / f"robot{i}_steps.jsonl"
        _write_jsonl(p, records)
        report.artifacts.append(str(p))
        p = out / f"robot{i}_summary.csv"
        _write_csv(p, ["t", "area", "contains_true_theta"],
                   ([repr(t), repr(a), int(c)] for t, a, c in
                    zip(rep.times, rep.area_history, rep.contains_true_theta)))
        report.artifacts.append(str(p))
        if with_ukf:
            p = out / f"robot{i}_compare.csv"
            _write_csv(p, ["t", "area", "ukf_error"],
                       ([repr(t), repr(a), repr(e)] for t, a, e in
                        zip(rep.times, rep.area_history, rep.ukf_error_history)))
            report.artifacts.append(str(p))
            p = out / f"robot{i}_ukf.csv"
            _write_csv(p, ["t", "mean_x", "mean_y", "trace_cov", "error_norm"], ukf_rows)
            report.artifacts.append(str(p))
        if rep.contradiction:
            log.error("robot %d: %s", i, rep.contradiction)
            code = EXIT_CONTRADICTION
    return code


# ------------------------------------------------------------------ SVG

def _svg_frame(box, width=480, pad=20):
    xmin, xmax, ymin, ymax = box
    scale = (width - 2 * pad) / max(xmax - xmin, ymax - ymin)
    height = int(round((ymax - ymin) * scale + 2 * pad))

    def tr(p):
        return pad + (p[0] - xmin) * scale, height - pad - (p[1] - ymin) * scale

    return width, height, tr


def _fmt(v: float) -> str:
    return f"{v:.3f}"


def region_svg(box, polygon: list, goal, path_xy=None, title="") -> str:
    w, h, tr = _svg_frame(box)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
             f"<title>{title}</title>",
             '<rect width="100%" height="100%" fill="white"/>']
    corners = [(box[0], box[2]), (box[1], box[2]), (box[1], box[3]), (box[0], box[3])]
    parts.append('<polygon points="%s" fill="none" stroke="#888" stroke-dasharray="4 3"/>'
                 % " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in map(tr, corners)))
    if len(polygon) >= 3:
        parts.append('<polygon points="%s" fill="#4caf50" fill-opacity="0.45" stroke="#1b5e20"/>'
                     % " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in map(tr, polygon)))
    if path_xy is not None and len(path_xy) > 1:
        parts.append('<polyline points="%s" fill="none" stroke="#1565c0" stroke-width="1.5"/>'
                     % " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in map(tr, path_xy)))
    gx, gy = tr(goal)
    parts.append(f'<circle cx="{_fmt(gx)}" cy="{_fmt(gy)}" r="4" fill="#c62828"/>')
    parts.append(f'<text x="8" y="14" font-size="12" font-family="sans-serif">{title}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def curves_svg(times, areas, errors=None, title="") -> str:
    """Area (green) and, if given, UKF error (red), each scaled to its own maximum."""
    w, h, pad = 560, 300, 40
    t0, t1 = float(times[0]), float(times[-1]) if times[-1] > times[0] else float(times[0]) + 1.0

    def line(vals, color):
        vmax = max(max(vals), 1e-300)
        pts = [(pad + (t - t0) / (t1 - t0) * (w - 2 * pad), h - pad - v / vmax * (h - 2 * pad))
               for t, v in zip(times, vals)]
        return ('<polyline points="%s" fill="none" stroke="%s" stroke-width="1.5"/>'
                % (" ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in pts), color))

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
             f"<title>{title}</title>",
             '<rect width="100%" height="100%" fill="white"/>',
             f'<line x1="{pad}" y1="{h - pad}" x2="{w - pad}" y2="{h - pad}" stroke="black"/>',
             f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{h - pad}" stroke="black"/>',
             line(areas, "#2e7d32")]
    if errors:
        parts.append(line(errors, "#c62828"))
    parts.append(f'<text x="{pad}" y="{pad - 10}" font-size="12" font-family="sans-serif">'
                 f'{title}: area (green, max {max(areas):.4g})'
                 + (f", UKF error (red, max {max(errors):.4g})" if errors else "") + "</text>")
    parts.append(f'<text x="{w - pad}" y="{h - 10}" font-size="12" text-anchor="end" '
                 f'font-family="sans-serif">t = {t0:.2f} .. {t1:.2f} s</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _render(args, report: RunReport) -> int:
    d = Path(args.input)
    try:
        cfg = ScenarioConfig.from_dict(json.loads((d / "scenario.json").read_text()))
    except (OSError, json.JSONDecodeError) as e:
        raise NoDataError(f"no data: {e}") from e
    out = Path(args.out_dir) if args.out_dir else d
    out.mkdir(parents=True, exist_ok=True)
    trace = _read_trace(d / "trace.csv")
    drew = False
    for i, r in enumerate(cfg.robots):
        steps_p = d / f"robot{i}_steps.jsonl"
        if not steps_p.exists():
            continue
        records = [json.loads(l) for l in steps_p.read_text().splitlines() if l.strip()]
        if not records:
            continue
        drew = True
        n = len(records)
        picks = sorted({int(round(k)) for k in np.linspace(0, n - 1, args.snapshots)})
        for j, k in enumerate(picks):
            rec = records[k]
            path_xy = trace.get(i, [])[: k + 1]
            svg = region_svg(cfg.theta0_box, rec["polygon"]["vertices"], r.goal, path_xy,
                             title=f"robot {i}, t = {rec['t']:.2f} s, area {rec['area']:.4g}")
            p = out / f"robot{i}_region_{j:03d}.svg"
            p.write_text(svg)
            report.artifacts.append(str(p))
        times = [rec["t"] for rec in records]
        areas = [rec["area"] for rec in records]
        errors = _read_column(d / f"robot{i}_compare.csv", "ukf_error")
        p = out / f"robot{i}_curves.svg"
        p.write_text(curves_svg(times, areas, errors[: len(times)] or None, title=f"robot {i}"))
        report.artifacts.append(str(p))
    if not drew:
        raise NoDataError(f"no data: no step records under {d}")
    return EXIT_OK


def _read_trace(path: Path) -> dict[int, list[tuple[float, float]]]:
    out: dict[int, list[tuple[float, float]]] = {}
    if not path.exists():
        return out
    with path.open() as fh:
        for row in csv.DictReader(fh):
            out.setdefault(int(row["robot"]), []).append((float(row["x"]), float(row["y"])))
    return out


def _read_column(path: Path, name: str) -> list[float]:
    if not path.exists():
        return []
    with path.open() as fh:
        return [float(row[name]) for row in csv.DictReader(fh)]


# ------------------------------------------------------------------ entry

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="regionid", description="Feasible-region goal identification for CBF-QP robots.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario_required=True):
        sp.add_argument("--scenario", required=scenario_required,
                        help="bundled name, JSON path, or 'random' (uses --seed)")
        sp.add_argument("--dt", type=float, default=None, help="override integration step [s]")
        sp.add_argument("--epsilon", type=float, default=None, help="base activity threshold")
        sp.add_argument("--rank-tol", type=float, default=None, help="relative rank tolerance")
        sp.add_argument("--cadence", type=int, default=1, help="intersect every n-th measurement")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out-dir", default=None, help=f"output directory (default ${OUT_DIR_ENV} or ./regionid_out)")
        sp.add_argument("--workers", type=int, default=1, help="parallel per-robot pipelines")
        sp.add_argument("-v", "--verbose", action="store_true")

    common(sub.add_parser("simulate", help="run a scenario and write trace and measurement logs"))
    for name, text in (("identify", "run the region observer"), ("compare", "run the region observer and the UKF")):
        sp = sub.add_parser(name, help=text)
        common(sp, scenario_required=False)
        sp.add_argument("--logs", default=None, help="directory written by 'simulate' (instead of --scenario)")
    sp = sub.add_parser("render", help="draw SVG region snapshots and curves")
    sp.add_argument("input", help="directory written by 'identify' or 'compare'")
    sp.add_argument("--out-dir", default=None)
    sp.add_argument("--snapshots", type=int, default=5)
    sp.add_argument("-v", "--verbose", action="store_true")
    return p


def run(argv: list[str] | None = None) -> tuple[int, RunReport]:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "render":
        report = RunReport("render", str(args.input))
        return _render(args, report), report

    if args.cadence < 1:
        raise ConfigError("--cadence must be >= 1")
    if args.workers < 1:
        raise ConfigError("--workers must be >= 1")
    out = _out_dir(args)
    if args.command in ("identify", "compare") and args.logs:
        cfg, streams = _read_sim_logs(Path(args.logs))
        report = RunReport(args.command, cfg.name)
    else:
        if not args.scenario:
            raise ConfigError("one of --scenario or --logs is required")
        cfg = _scenario(args)
        report = RunReport(args.command, cfg.name)
        sim = run_scenario(cfg)
        report.artifacts += _write_sim_logs(out, cfg, sim)
        streams = sim.measurements
    if args.command != "simulate" and args.logs:
        (out / "scenario.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    code = EXIT_OK
    if args.command in ("identify", "compare"):
        code = _identify(args, cfg, streams, out, args.command == "compare", report)
    p = out / "report.json"
    p.write_text(json.dumps(report.to_dict()) + "\n")
    return code, report


def main(argv: list[str] | None = None) -> int:
    try:
        code, _ = run(argv)
    except (ConfigError, NoDataError) as e:
        print(f"regionid: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ContradictionError as e:
        print(f"regionid: contradiction: {e}", file=sys.stderr)
        return EXIT_CONTRADICTION
    except QPInfeasibleError as e:
        print(f"regionid: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    return code


if __name__ == "__main__":
    sys.exit(main())
