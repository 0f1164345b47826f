"""Command-line driver: construct, verify, sweep.

stdout carries nothing but result paths; stderr carries human-readable stage
logs.  Exit codes: 0 success, 2 config or load error, 3 pipeline stage
failure, 4 budget violation, 5 verification property failure.

Wall-clock timings are written to a separate timings.json: report.json and
esn.json are bitwise-deterministic functions of the config and seed, and
timings are not.
"""

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .construct import (
    BudgetError,
    ConstructionConfig,
    ConstructionError,
    ConstructionResult,
    chained_functional,
    construct_universal_esn,
    split_lag_blocks,
)
from .esn import ESNParams, check_contraction, check_esp_empirical, check_nilpotent
from .filters import filter_from_json
from .shallow import ShallowNet, WidthPolicy
from .windows import InputWindow, sample_window_array

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3
EXIT_BUDGET = 4
EXIT_VERIFY = 5

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


def _log(msg: str):
    print(msg, file=sys.stderr)


def _load_json(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def _policy_from(obj: dict | None) -> WidthPolicy:
    obj = obj or {}
    kwargs = {}
    for key in ("start_width", "max_width", "train_samples", "val_samples"):
        if key in obj:
            kwargs[key] = int(obj[key])
    for key in ("ridge", "scale"):
        if key in obj and obj[key] is not None:
            kwargs[key] = float(obj[key])
    return WidthPolicy(**kwargs)


def _construction_from(obj: dict, seed_override: int | None) -> ConstructionConfig:
    try:
        eps = float(obj["eps"])
    except KeyError:
        raise ConfigError("construction config needs an 'eps'") from None
    seed = int(obj.get("seed", 0))
    if os.environ.get("UNIESN_SEED"):
        seed = int(os.environ["UNIESN_SEED"])
    if seed_override is not None:
        seed = seed_override
    kwargs = {}
    for key in ("chain_samples", "budget_windows", "budget_window_len", "closed_form_check_windows"):
        if key in obj:
            kwargs[key] = int(obj[key])
    if "margin" in obj:
        kwargs["margin"] = float(obj["margin"])
    return ConstructionConfig(
        eps=eps,
        seed=seed,
        static_policy=_policy_from(obj.get("static_policy")),
        identity_policy=_policy_from(obj.get("identity_policy")),
        **kwargs,
    )


def _write_json(path: Path, obj: dict):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _truncation_status(result: ConstructionResult) -> str:
    return "analytic_upper_bound" if result.target_certified else "uncertified_user_claim"


def _budget_rows(result: ConstructionResult) -> list[tuple]:
    b = result.budget
    third = b.eps / 3.0
    return [
        ("truncation", b.truncation_analytic, _truncation_status(result), third),
        ("net_fit", b.net_fit_sampled, "sampled_sup", third),
        ("chain", b.chain_sampled, "sampled_sup", third),
        ("total", b.total_sampled, "sampled_sup", b.eps),
    ]


def _write_budget_csv(path: Path, result: ConstructionResult):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# schema_version={SCHEMA_VERSION}\n")
        writer = csv.writer(fh)
        writer.writerow(["term", "value", "status", "limit"])
        for term, value, status, limit in _budget_rows(result):
            writer.writerow([term, repr(float(value)), status, repr(float(limit))])


def _report_dict(result: ConstructionResult, cfg: ConstructionConfig, filter_spec: dict) -> dict:
    esn = result.esn
    return {
        "schema_version": SCHEMA_VERSION,
        "target": filter_spec,
        "eps": cfg.eps,
        "seed": cfg.seed,
        "margin": cfg.margin,
        "horizon": result.horizon,
        "widths": list(esn.structure.widths),
        "state_dim": esn.state_dim,
        "gain": result.gain,
        "budget": {
            "eps": result.budget.eps,
            "truncation": result.budget.truncation_analytic,
            "net_fit": result.budget.net_fit_sampled,
            "chain": result.budget.chain_sampled,
            "total": result.budget.total_sampled,
        },
        "budget_status": {
            "truncation": _truncation_status(result),
            "net_fit": "sampled_sup",
            "chain": "sampled_sup",
            "total": "sampled_sup",
        },
        "target_certified": result.target_certified,
        "per_lag_chain": result.chain_records,
        "net_fit_achieved_validation": result.net_fit_achieved,
        "closed_form_check": {
            "windows": result.closed_form_check_windows,
            "max_gap": result.closed_form_check_max,
            "tolerance": 1e-10,
        },
        "functional_evaluator": "closed_form",
        "sample_counts": {
            "chain_samples": cfg.chain_samples,
            "budget_windows": cfg.budget_windows,
            "budget_window_len": cfg.budget_window_len,
            "closed_form_check_windows": cfg.closed_form_check_windows,
        },
        "width_table": {
            "static_net": {"width": result.split.net.width, "achieved": result.net_fit_achieved},
            "identity_chain": [net.width for net in result.chain],
        },
    }


def _run_one(filter_spec: dict, cfg: ConstructionConfig) -> ConstructionResult:
    f = filter_from_json(filter_spec)
    result = construct_universal_esn(f, cfg)
    for stage, secs in result.wall_times.items():
        _log(f"stage {stage}: {secs:.3f}s")
    b = result.budget
    _log(
        f"horizon={result.horizon} state_dim={result.esn.state_dim} gain={result.gain:.4g} "
        f"budget: truncation={b.truncation_analytic:.4g} net_fit={b.net_fit_sampled:.4g} "
        f"chain={b.chain_sampled:.4g} total={b.total_sampled:.4g} (< eps={b.eps:g})"
    )
    return result


def cmd_construct(config_path: str, out_dir: str | None, seed: int | None) -> int:
    try:
        raw = _load_json(config_path)
        filter_spec = raw["filter"]
        cfg = _construction_from(raw.get("construction", {}), seed)
        out = Path(out_dir or raw.get("output", {}).get("dir", "."))
    except (ConfigError, KeyError, TypeError, ValueError) as exc:
        _log(f"config error: {exc}")
        return EXIT_CONFIG

    try:
        result = _run_one(filter_spec, cfg)
    except BudgetError as exc:
        _log(f"budget violation: {exc}")
        return EXIT_BUDGET
    except ConstructionError as exc:
        _log(f"stage {exc.stage} failed: {exc}")
        return EXIT_STAGE
    except ValueError as exc:
        _log(f"config error: {exc}")
        return EXIT_CONFIG

    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "esn.json", result.esn.to_json())
    _write_json(
        out / "nets.json",
        {
            "lag_dim": result.split.lag_dim,
            "static_net": result.split.net.to_json(),
            "identity_chain": [net.to_json() for net in result.chain],
        },
    )
    _write_json(out / "report.json", _report_dict(result, cfg, filter_spec))
    _write_budget_csv(out / "budget.csv", result)
    _write_json(
        out / "timings.json",
        {"stages": result.wall_times, "total": sum(result.wall_times.values())},
    )
    print(str(out / "report.json"))
    return EXIT_OK


def _boundary_directions(rng: np.random.Generator, n: int, d: int, M: float) -> np.ndarray:
    dirs = rng.standard_normal((n, d))
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return dirs / norms * M


def _verify_structured(esn: ESNParams, vcfg: dict, nets_path: Path | None) -> dict:
    K = esn.structure.horizon
    d = esn.in_dim
    M = float(vcfg.get("input_bound", 1.0))
    seed = int(vcfg.get("seed", 2024))
    esp_trials = int(vcfg.get("esp_trials", 10))
    fmp_trials = int(vcfg.get("fmp_trials", 1000))
    T = max(int(vcfg.get("window_len", 30)), K + 1)

    checks: dict[str, dict] = {}

    ok, degree = check_nilpotent(esn)
    checks["nilpotency"] = {"passed": bool(ok and degree == K + 1), "degree": degree}

    probe = sample_window_array(d, M, K + 1, 3, seed)[-1]
    esp = check_esp_empirical(esn, InputWindow(entries=probe, bound=M), esp_trials, seed + 1)
    checks["echo_state"] = {"passed": bool(esp), "trials": esp_trials}

    arr = sample_window_array(d, M, T, fmp_trials, seed + 2)
    rng = np.random.default_rng(seed + 3)
    modified = arr.copy()
    past = T - (K + 1)
    if past > 0:
        modified[:, :past, :] = _boundary_directions(
            rng, fmp_trials * past, d, M
        ).reshape(fmp_trials, past, d)
    same = np.array_equal(esn.functional_batch(arr), esn.functional_batch(modified))
    checks["finite_memory"] = {"passed": bool(same), "trials": fmp_trials}

    if nets_path is not None and nets_path.exists():
        nets = _load_json(nets_path)
        split = split_lag_blocks(ShallowNet.from_json(nets["static_net"]), int(nets["lag_dim"]))
        chain = [ShallowNet.from_json(o) for o in nets["identity_chain"]]
        n_check = min(int(vcfg.get("closed_form_windows", 200)), arr.shape[0])
        rec = esn.functional_batch(arr[:n_check])
        direct = chained_functional(split, chain, arr[:n_check])
        gap = float(np.max(np.linalg.norm(rec - direct, axis=1)))
        checks["closed_form"] = {"passed": bool(gap <= 1e-10), "max_gap": gap, "windows": n_check}
    else:
        checks["closed_form"] = {"skipped": True, "reason": "no nets.json available"}

    return checks


def cmd_verify(esn_path: str, config_path: str) -> int:
    try:
        esn = ESNParams.from_json(_load_json(esn_path))
        raw = _load_json(config_path)
    except (ConfigError, KeyError, TypeError, ValueError) as exc:
        _log(f"load error: {exc}")
        return EXIT_CONFIG

    vcfg = dict(raw.get("verification", {}))
    if "input_bound" not in vcfg and "filter" in raw:
        vcfg["input_bound"] = raw["filter"].get("M", 1.0)

    nets_path = vcfg.get("nets")
    nets_path = Path(nets_path) if nets_path else Path(esn_path).parent / "nets.json"

    if esn.structure is not None:
        checks = _verify_structured(esn, vcfg, nets_path)
    else:
        rho = check_contraction(esn)
        checks = {"contraction": {"passed": bool(rho < 1.0), "value": rho}}

    out_path = Path(vcfg.get("out", Path(esn_path).parent / "verify.json"))
    all_passed = all(c.get("passed", True) for c in checks.values())
    _write_json(out_path, {"schema_version": SCHEMA_VERSION, "checks": checks, "passed": all_passed})
    for name, c in checks.items():
        status = "skipped" if c.get("skipped") else ("pass" if c.get("passed") else "FAIL")
        _log(f"check {name}: {status}")
    print(str(out_path))
    return EXIT_OK if all_passed else EXIT_VERIFY


SWEEP_COLUMNS = [
    "eps", "horizon", "state_dim", "widths",
    "truncation", "net_fit", "chain", "total", "wall_time_s", "status",
]


def cmd_sweep(config_path: str, eps_arg: str | None, out_dir: str | None, seed: int | None) -> int:
    try:
        raw = _load_json(config_path)
        filter_spec = raw["filter"]
        base = dict(raw.get("construction", {}))
        if eps_arg:
            eps_list = [float(x) for x in eps_arg.split(",") if x.strip()]
        else:
            eps_list = [float(x) for x in raw.get("sweep", {}).get("eps", [])]
        if not eps_list:
            raise ConfigError("sweep needs a non-empty eps list (config sweep.eps or --eps)")
        out = Path(out_dir or raw.get("output", {}).get("dir", "."))
    except (ConfigError, KeyError, TypeError, ValueError) as exc:
        _log(f"config error: {exc}")
        return EXIT_CONFIG

    out.mkdir(parents=True, exist_ok=True)
    rows = []
    worst = EXIT_OK
    for eps in eps_list:
        base["eps"] = eps
        t0 = time.perf_counter()
        try:
            cfg = _construction_from(base, seed)
            result = _run_one(filter_spec, cfg)
            b = result.budget
            rows.append([
                repr(eps), result.horizon, result.esn.state_dim,
                "|".join(str(w) for w in result.esn.structure.widths),
                repr(b.truncation_analytic), repr(b.net_fit_sampled),
                repr(b.chain_sampled), repr(b.total_sampled),
                f"{time.perf_counter() - t0:.3f}", "ok",
            ])
        except BudgetError as exc:
            _log(f"eps={eps:g}: budget violation: {exc}")
            rows.append([repr(eps), "", "", "", "", "", "", "", f"{time.perf_counter() - t0:.3f}", f"budget:{exc.term}"])
            worst = worst or EXIT_BUDGET
        except ConstructionError as exc:
            _log(f"eps={eps:g}: stage {exc.stage} failed: {exc}")
            rows.append([repr(eps), "", "", "", "", "", "", "", f"{time.perf_counter() - t0:.3f}", f"stage:{exc.stage}"])
            worst = worst or EXIT_STAGE
        except (ConfigError, ValueError) as exc:
            _log(f"eps={eps:g}: config error: {exc}")
            rows.append([repr(eps), "", "", "", "", "", "", "", f"{time.perf_counter() - t0:.3f}", "config"])
            worst = worst or EXIT_CONFIG

    sweep_path = out / "sweep.csv"
    with open(sweep_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# schema_version={SCHEMA_VERSION}\n")
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        writer.writerows(rows)
    print(str(sweep_path))
    return worst


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="uniesn",
        description="Construct echo state networks within eps of a target filter and certify them.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_construct = sub.add_parser("construct", help="run the construction pipeline")
    p_construct.add_argument("config", help="JSON run config")
    p_construct.add_argument("--out", default=None, help="output directory")
    p_construct.add_argument("--seed", type=int, default=None, help="override config seed")

    p_verify = sub.add_parser("verify", help="re-check a serialized system's properties")
    p_verify.add_argument("esn", help="esn.json written by construct")
    p_verify.add_argument("config", help="JSON run config")

    p_sweep = sub.add_parser("sweep", help="construct across a list of tolerances")
    p_sweep.add_argument("config", help="JSON run config")
    p_sweep.add_argument("--eps", default=None, help="comma-separated tolerance list")
    p_sweep.add_argument("--out", default=None, help="output directory")
    p_sweep.add_argument("--seed", type=int, default=None, help="override config seed")

    args = parser.parse_args(argv)
    if args.command == "construct":
        return cmd_construct(args.config, args.out, args.seed)
    if args.command == "verify":
        return cmd_verify(args.esn, args.config)
    if args.command == "sweep":
        return cmd_sweep(args.config, args.eps, args.out, args.seed)
    parser.error(f"unknown command {args.command!r}")
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
