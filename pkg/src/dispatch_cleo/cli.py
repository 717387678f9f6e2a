"""Command-line entry point.

Subcommands: ``run`` (one case to summary.json + convergence.csv),
``sweep`` (a run per value of one config key), ``validate`` (case-file
check) and ``dump-qp`` (serialize the assembled dispatch QP).

Exit codes: 0 success, 1 validation/usage error, 2 solver failure.
Outputs are byte-identical for identical flags: one master ``--seed``
feeds named sub-streams and nothing time- or path-dependent is written.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys as _sys

import numpy as np

from . import baseline, qpsolve
from .config import get_key, set_key
from .dispatch import participation_factors
from .netmodel import CaseError, compute_ptdf, incidence_maps, load_case
from .scenario import covariance_of, from_config as uncertainty_from_config
from .scenario import variance_cost_coeffs

SCHEMA_VERSION = 1


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path) as f:
        cfg = json.load(f)
    if not isinstance(cfg, dict):
        raise ValueError("config file must hold a JSON object")
    return cfg


def _threads_from_env() -> int:
    raw = os.environ.get("DISPATCH_CLEO_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as e:
        raise ValueError(f"DISPATCH_CLEO_THREADS must be an integer, got {raw!r}") from e
    if n < 1:
        raise ValueError("DISPATCH_CLEO_THREADS must be >= 1")
    return n


def _json_ready(value):
    if isinstance(value, float) and math.isnan(value):
        return None
    if isinstance(value, dict):
        return {k: _json_ready(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_ready(v) for v in value]
    return value


def _write_summary(path: str, payload: dict) -> None:
    with open(path, "w") as f:
        json.dump(_json_ready(payload), f, sort_keys=True, indent=2)
        f.write("\n")


def _write_convergence(path: str, history, fallback_objective: float) -> None:
    rows = ["iter,objective,radius,rho,accepted"]
    if history:
        for rec in history:
            rho = "" if math.isnan(rec.rho) else repr(rec.rho)
            o = "" if math.isnan(rec.objective) else repr(rec.objective)
            rows.append(
                f"{rec.iter},{o},{repr(rec.radius)},{rho},{int(rec.accepted)}"
            )
    else:
        rows.append(f"0,{repr(fallback_objective)},,,1")
    with open(path, "w") as f:
        f.write("\n".join(rows) + "\n")


def _cmd_run(args) -> int:
    sys_model = load_case(args.case)
    config = _load_config(args.config)
    config["seed"] = args.seed
    if args.samples is not None:
        set_key(config, "dispatch.samples", args.samples)
    case_id = int(args.scenario.removeprefix("case"))
    result = baseline.run_case(sys_model, None, case_id, config)

    os.makedirs(args.out, exist_ok=True)
    summary = {
        "schema": SCHEMA_VERSION,
        "case_file": os.path.basename(args.case),
        "scenario": args.scenario,
        **result.to_dict(),
    }
    _write_summary(os.path.join(args.out, "summary.json"), summary)
    _write_convergence(
        os.path.join(args.out, "convergence.csv"), result.history, result.objective
    )
    print(f"wrote {args.out}/summary.json ({args.scenario}, seed {args.seed})")
    return 0


def _cmd_sweep(args) -> int:
    values = json.loads(args.values)
    if not isinstance(values, list) or not values:
        raise ValueError("--values must be a nonempty JSON array")
    base_config = _load_config(args.config)
    os.makedirs(args.out, exist_ok=True)
    index = []
    for i, value in enumerate(values):
        config = json.loads(json.dumps(base_config))
        set_key(config, args.param, value)
        config["seed"] = args.seed
        sys_model = load_case(args.case)
        case_id = int(args.scenario.removeprefix("case"))
        result = baseline.run_case(sys_model, None, case_id, config)
        subdir = os.path.join(args.out, f"value_{i}")
        os.makedirs(subdir, exist_ok=True)
        summary = {
            "schema": SCHEMA_VERSION,
            "case_file": os.path.basename(args.case),
            "scenario": args.scenario,
            "swept_param": args.param,
            "swept_value": value,
            **result.to_dict(),
        }
        _write_summary(os.path.join(subdir, "summary.json"), summary)
        _write_convergence(
            os.path.join(subdir, "convergence.csv"), result.history, result.objective
        )
        index.append(
            {
                "value": value,
                "dir": f"value_{i}",
                "objective": result.objective,
                "dr_commitment_total": result.dr_total,
            }
        )
    _write_summary(
        os.path.join(args.out, "sweep.json"),
        {"schema": SCHEMA_VERSION, "param": args.param, "runs": index},
    )
    print(f"wrote {args.out}/sweep.json ({len(values)} runs)")
    return 0


def _cmd_validate(args) -> int:
    sys_model = load_case(args.case)
    print(
        f"{args.case}: ok "
        f"(buses={sys_model.n_b}, lines={sys_model.n_l}, "
        f"generators={sys_model.n_g}, res={sys_model.n_r}, "
        f"drps={sys_model.n_drp}, loads={len(sys_model.loads)})"
    )
    return 0


def _cmd_dump_qp(args) -> int:
    sys_model = load_case(args.case)
    config = _load_config(args.config)
    uncertainty = uncertainty_from_config(sys_model, config)
    alpha = participation_factors(sys_model)
    a_prime = variance_cost_coeffs(sys_model, covariance_of(uncertainty))
    include_var = args.scenario != "case2"
    prob = qpsolve.assemble_sed_qp(
        sys_model,
        alpha,
        np.zeros(sys_model.n_g) if not include_var else a_prime,
        compute_ptdf(sys_model),
        incidence_maps(sys_model),
        model=None,
        margin=float(get_key(config, "dispatch.adequacy_margin", 0.0)),
        include_variance=include_var,
    )
    text = qpsolve.dump_qp(prob)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
        print(f"wrote {args.out}")
    else:
        print(text, end="")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dispatch-cleo",
        description="Stochastic dispatch with demand response under "
        "decision-dependent uncertainty.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="solve one case and write results")
    p_run.add_argument("--case", required=True)
    p_run.add_argument(
        "--scenario", choices=["case1", "case2", "case3"], default="case1"
    )
    p_run.add_argument("--seed", type=int, default=0)
    p_run.add_argument("--samples", type=int, default=None)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--config", default=None)
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="repeat a run over a value grid")
    p_sweep.add_argument("--case", required=True)
    p_sweep.add_argument("--param", required=True)
    p_sweep.add_argument("--values", required=True, help="JSON array of values")
    p_sweep.add_argument(
        "--scenario", choices=["case1", "case2", "case3"], default="case1"
    )
    p_sweep.add_argument("--seed", type=int, default=0)
    p_sweep.add_argument("--out", required=True)
    p_sweep.add_argument("--config", default=None)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_val = sub.add_parser("validate", help="load and check a case file")
    p_val.add_argument("--case", required=True)
    p_val.set_defaults(func=_cmd_validate)

    p_dump = sub.add_parser("dump-qp", help="serialize the assembled dispatch QP")
    p_dump.add_argument("--case", required=True)
    p_dump.add_argument(
        "--scenario", choices=["case2", "case3"], default="case3"
    )
    p_dump.add_argument("--out", default=None)
    p_dump.add_argument("--config", default=None)
    p_dump.set_defaults(func=_cmd_dump_qp)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        _threads_from_env()
        return args.func(args)
    except (CaseError, ValueError, OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=_sys.stderr)
        return 1
    except qpsolve.SolverError as e:
        print(f"solver error: {e}", file=_sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
