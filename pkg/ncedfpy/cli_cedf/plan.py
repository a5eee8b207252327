#!/usr/bin/python3

import argparse
from typing import List, Optional

from ncedfpy import fileutil, simulator
from ncedfpy.cli_cedf import cliutil

PLOT_COLUMNS = ["step", "ee_goal_dist", "gt_clearance"]


def handle_parameters(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        description=(
            "Runs one closed-loop episode of the controller among moving obstacles "
            "and logs the trajectory"
        )
    )
    parser.add_argument(
        "--scenario",
        required=True,
        help="Scenario file, or the name of a shipped one like desk_scenario_4link.json",
    )
    cliutil.add_model_arguments(parser)
    parser.add_argument("--out", required=True, help="Per-step trajectory log (JSON lines)")
    parser.add_argument(
        "--shape",
        default="ncedf",
        help='Robot shape used by the collision cost: ncedf, spheres, spheres:K or pcloud:P. Default: ncedf',
    )
    parser.add_argument("--seed", type=int, help="Override the environment seed of the scenario")
    parser.add_argument("--plot-csv", help="Also write step, goal distance and clearance as CSV")
    parser.add_argument(
        "--audit",
        action="store_true",
        help=(
            "Log the exact cloud-to-robot distance next to the estimate at every step and report the share "
            "of steps within the model's error bound (slow)"
        ),
    )
    parser.add_argument(
        "--omit-timing",
        action="store_true",
        help="Write solve times as 0, so that repeated runs compare byte for byte",
    )
    cliutil.add_common_arguments(parser)
    return parser.parse_args(argv)


def execute(options: argparse.Namespace) -> int:
    scenario = simulator.load_scenario(cliutil.config_path(options.scenario))
    if options.seed is not None:
        scenario = scenario.with_seed(options.seed)
    simulator.parse_shape_mode(options.shape)
    geometries = scenario.robot.geometries
    cedf = cliutil.robot_cedf(options, geometries, [options.shape])
    backend = simulator.make_backend(options.shape, cedf, geometries)

    result = simulator.run_episode(scenario, backend, threads=options.threads, audit=options.audit)

    out = fileutil.resolve_output_path(options.out)
    header = {
        "scenario": scenario.to_dict(),
        "shape": options.shape,
        "env_hash": result.env_hash,
        "outcome": result.outcome,
        "steps": result.steps,
    }
    fileutil.write_jsonl(out, header, (r.to_dict(options.omit_timing) for r in result.records))
    outputs = {"trajectory": out}
    if options.plot_csv:
        plot = fileutil.resolve_output_path(options.plot_csv)
        fileutil.write_csv(plot, PLOT_COLUMNS, ((r.step, r.ee_goal_dist, r.gt_clearance) for r in result.records))
        outputs["plot"] = plot
    cliutil.write_manifest(
        "cedf-plan",
        {"scenario": scenario.to_dict(), "shape": options.shape, "models": options.model},
        {"environment": scenario.seed, "mppi": scenario.mppi.seed},
        outputs,
    )
    summary = {
        "outcome": result.outcome,
        "steps": result.steps,
        "mean_solve_ms": 0.0 if options.omit_timing else result.mean_solve_ms,
        "floored_queries": result.query.floored,
    }
    if options.audit and cedf is not None and cedf.audit_slack is not None:
        summary["audit_fraction"] = simulator.audit_fraction(result.records, cedf.audit_slack)
    cliutil.print_summary(summary)
    return cliutil.EXIT_OK


def main(argv: Optional[List[str]] = None) -> None:
    cliutil.main_wrapper(handle_parameters, execute, argv)


if __name__ == "__main__":
    main()
