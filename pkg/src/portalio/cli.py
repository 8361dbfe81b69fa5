"""Command-line interface.

  portalio simulate --config cfg.toml --out data/       build a dataset
  portalio run --dataset data/ --mode single|dual|single+vio
               --config cfg.toml --out session/          run odometry
  portalio eval --est traj.tum --gt gt.tum --align umeyama --json
               [--plot-dir figs/]                        trajectory metrics
  portalio scenarios list|export                         scenario corpus

Exit codes: 0 success, 2 configuration/validation error, 3 runtime I/O
error. A diverged pipeline is data, not an error: run still exits 0.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from portalio.config import ConfigError, load_config
from portalio.evaluate import EvaluationError, compute_ate
from portalio.geometry import read_tum
from portalio.pipeline import SessionError, run_session
from portalio.scenarios import export_scenarios, list_scenarios, load_scenario
from portalio.sim.scene import Scene
from portalio.simulate import build_dataset, load_dataset

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if cfg.sim.scene_path is None:
        raise ConfigError("config must reference a scene file under [sim] scene = ...")
    try:
        scene = Scene.load(cfg.sim.scene_path)
    except FileNotFoundError as e:
        raise ConfigError(f"scene file not found: {e}") from e
    out = build_dataset(cfg, scene, args.out)
    print(f"dataset written to {out}")
    return EXIT_OK


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    try:
        dataset = load_dataset(args.dataset)
    except (OSError, ValueError, KeyError) as e:
        print(f"error: cannot load dataset: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    try:
        result = run_session(dataset, cfg, mode=args.mode, primary=args.sensor)
    except SessionError as e:
        raise ConfigError(str(e)) from e
    result.write(args.out)
    statuses = {
        name: log[-1][1] if log else "?" for name, log in result.status_log.items()
    }
    print(
        f"session complete in {result.wall_time:.1f}s: "
        + ", ".join(f"{n}={s}" for n, s in statuses.items())
        + f"; map points={len(result.map)}"
    )
    if args.plots:
        from portalio.report import plot_diagnostics

        for name, lines in result.reports.items():
            plot_diagnostics(Path(args.out) / f"diag_{name}.png", lines)
    return EXIT_OK


def _cmd_eval(args) -> int:
    try:
        est_t, est_p = read_tum(args.est)
        gt_t, gt_p = read_tum(args.gt)
    except (OSError, ValueError) as e:
        print(f"error: cannot read trajectory: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    align = {"none": "none", "umeyama": "se3-umeyama"}[args.align]
    report = compute_ate(est_t, est_p, gt_t, gt_p, align=align)
    if args.json:
        print(json.dumps(report.to_dict(), indent=1))
    else:
        d = report.to_dict()
        for k, v in d.items():
            print(f"{k}: {v}")
    if args.plot_dir:
        from portalio.report import render_eval_report

        files = render_eval_report(args.plot_dir, est_t, est_p, gt_t, gt_p, report, align=align)
        print(f"wrote {len(files)} report files to {args.plot_dir}", file=sys.stderr)
    return EXIT_OK


def _cmd_scenarios(args) -> int:
    if args.action == "list":
        for name in list_scenarios():
            sc = load_scenario(name)
            print(f"{name:14s} {sc.regime:16s} {sc.description}")
        return EXIT_OK
    out = args.out or "scenarios"
    files = export_scenarios(out)
    print(f"wrote {len(files)} files to {out}")
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="portalio", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("simulate", help="generate a synthetic dataset")
    ps.add_argument("--config", required=True)
    ps.add_argument("--out", required=True)
    ps.set_defaults(fn=_cmd_simulate)

    pr = sub.add_parser("run", help="run odometry over a dataset")
    pr.add_argument("--dataset", required=True)
    pr.add_argument("--mode", required=True, choices=["single", "dual", "single+vio"])
    pr.add_argument("--config", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--sensor", default="l1", choices=["l1", "l2"],
                    help="which sensor a single-mode run uses")
    pr.add_argument("--plots", action="store_true", help="render diagnostic figures")
    pr.set_defaults(fn=_cmd_run)

    pe = sub.add_parser("eval", help="trajectory error metrics")
    pe.add_argument("--est", required=True)
    pe.add_argument("--gt", required=True)
    pe.add_argument("--align", default="umeyama", choices=["none", "umeyama"])
    pe.add_argument("--json", action="store_true", help="print the report as JSON")
    pe.add_argument("--plot-dir", default=None,
                    help="also render figures + error CSV into this directory")
    pe.set_defaults(fn=_cmd_eval)

    pc = sub.add_parser("scenarios", help="list or export the scenario corpus")
    pc.add_argument("action", choices=["list", "export"])
    pc.add_argument("--out", default=None)
    pc.set_defaults(fn=_cmd_scenarios)
    return p


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except EvaluationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
