"""Command-line interface: ``percdetect <command> [options]``.

Exit status is 0 on success, 2 when ``detect`` finds the signal-to-noise
range undetectable on the given lattice, and 1 on any error (a JSON error
record goes to stdout and, when possible, to ``<out>/error.json``).
"""

import argparse
import csv
from dataclasses import asdict, dataclass, field
import hashlib
import json
import math
import os
import sys
from typing import List, Optional

import numpy as np

from . import __version__
from .detect import (
    SCHEMA_VERSION,
    CalibratedPhi,
    CalibrationTable,
    TheoryPhi,
    calibrate_schedule,
    dyadic_schedule,
    error_probability,
    multi_test,
    never_reject_bound,
    phi_theory,
    s_max,
    tau0_from_uncertainty,
    uncertainty_check,
    weak_bound_constant,
    weak_uncertainty_bound,
)
from .imageio import image_to_observed, load_pgm, observed_to_image, save_pgm
from .lattice import square_indicator
from .noise import apply_noise, parse_noise
from .perclab import (
    SquareSignal,
    complexity_probe,
    crossing_frequency,
    estimate_cluster_stats,
    estimate_error_rates,
    log_tail_r2,
    verify_lambda_bound,
)

COMMANDS = ("detect", "simulate", "calibrate", "uncertainty", "errors", "perclab")
EXIT_OK, EXIT_ERROR, EXIT_UNDETECTABLE = 0, 1, 2

# options that never change numerical results and stay out of the config hash
_NON_SEMANTIC = {"out", "workers", "config"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass
class RunConfig:
    command: str
    options: dict = field(default_factory=dict)

    def semantic(self):
        return {k: v for k, v in sorted(self.options.items()) if k not in _NON_SEMANTIC}

    def digest(self) -> str:
        blob = json.dumps({"command": self.command, **self.semantic()}, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()

    @property
    def out(self) -> str:
        return self.options.get("out") or "."


def _floats(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value file; flags on the command line win")
    common.add_argument("--n", type=int, help="lattice side N")
    common.add_argument("--sigma", type=float, default=1.0, help="noise scale")
    common.add_argument("--noise", default="gaussian", help="noise descriptor, e.g. student_t:nu=5")
    common.add_argument("--r", type=float, default=1.0, help="detector range")
    common.add_argument("--tau0", type=float, help="lowest threshold (default: uncertainty floor)")
    common.add_argument("--phi-mode", choices=("theory", "calibrated"), default="calibrated")
    common.add_argument("--k0-factor", type=float, default=2.0, help="K0 = factor / log(1 + 18 (1/2 - p_E))")
    common.add_argument("--k0", type=float, help="fixed K0 for theory mode")
    common.add_argument("--alpha", type=float, default=0.05)
    common.add_argument("--replicates", type=int, default=1000)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--workers", type=int, default=1, help="threads; never changes results")

    parser = _Parser(prog="percdetect", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"percdetect {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    p = sub.add_parser("detect", parents=[common], help="multi-threshold maximum cluster test on a PGM")
    p.add_argument("input", nargs="?", help="PGM file (P2 or P5); may also come from --config")
    p.add_argument("--baseline", type=float, help="pixel value mapped to 0 (default maxval/2)")
    p.add_argument("--level-adjust", choices=("bonferroni", "none"), default="bonferroni")
    p.add_argument("--calibration", help="calibration table JSON to reuse")

    p = sub.add_parser("simulate", parents=[common], help="write a synthetic noisy PGM")
    p.add_argument("--side", type=int, default=0, help="side of the centered signal square (0: none)")
    p.add_argument("--intensity", type=float, default=1.0)
    p.add_argument("--maxval", type=int, default=255)
    p.add_argument("--plain", action="store_true", help="write P2 instead of P5")

    p = sub.add_parser("calibrate", parents=[common], help="null quantiles of the max-cluster statistic")
    p.add_argument("--tau", type=_floats, help="comma-separated thresholds (default: dyadic schedule)")

    p = sub.add_parser("uncertainty", parents=[common], help="detectability bound for an SNR")
    p.add_argument("--rho", type=float, help="signal-to-noise ratio (default r/sigma)")

    p = sub.add_parser("errors", parents=[common], help="empirical error rates across lattice sizes")
    p.add_argument("--ns", type=_ints, default=[32, 64, 128])
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--side-fraction", type=float, default=0.25)
    p.add_argument("--intensity", type=float, default=1.0)

    p = sub.add_parser("perclab", parents=[common], help="percolation Monte Carlo")
    p.add_argument("--task", choices=("stats", "crossing", "complexity"), default="stats")
    p.add_argument("--p", type=_floats, default=[0.3, 0.4])
    p.add_argument("--ns", type=_ints, default=[64, 128, 256, 512])
    p.add_argument("--mode", choices=("single", "multi"), default="single")
    p.add_argument("--bootstrap", type=int, default=500)
    parser.subcommands = sub.choices
    return parser


def read_config_file(path) -> dict:
    """Plain ``key = value`` lines; ``#`` starts a comment. Keys use flag names."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            out[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    return out


def _apply_config(parser, argv) -> argparse.Namespace:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return parser.parse_args(argv)
    values = read_config_file(known.config)
    command = values.pop("command", None)
    if command and not any(a in COMMANDS for a in argv):
        argv = [command] + list(argv)
    # feed config entries through the parser so they get the same type checks
    ns = parser.parse_args(argv)
    sub_actions = parser.subcommands[ns.command]._actions
    given = {a.split("=", 1)[0] for a in argv if a.startswith("--")}
    explicit = {a.dest for a in sub_actions if given & set(a.option_strings)}
    for a in sub_actions:
        positional_given = not a.option_strings and getattr(ns, a.dest, None) is not None
        if a.dest in values and a.dest not in explicit and not positional_given:
            raw = values[a.dest]
            if a.const is not None and a.nargs == 0:
                setattr(ns, a.dest, raw.lower() in ("1", "true", "yes", "on"))
            else:
                setattr(ns, a.dest, a.type(raw) if a.type else raw)
    unknown = set(values) - {a.dest for a in sub_actions}
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    return ns


# ------------------------------------------------------------ output helpers


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _envelope(cfg: RunConfig, kind: str, body: dict) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "seed": cfg.options.get("seed"),
        "config_hash": cfg.digest(),
        "config": {"command": cfg.command, **cfg.semantic()},
        **body,
    }


def write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_csv(path, rows: List[dict], header_comment: Optional[dict] = None) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write("# " + json.dumps(_jsonable(header_comment), sort_keys=True) + "\n")
        if not rows:
            return
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


# ------------------------------------------------------------ commands


def _require(o, *names):
    missing = [n for n in names if o.get(n) is None]
    if missing:
        raise UsageError(f"missing required option(s): {', '.join('--' + m.replace('_', '-') for m in missing)}")


def _schedule_tau0(model, o, N):
    return o["tau0"] if o.get("tau0") is not None else tau0_from_uncertainty(model, o["sigma"], N)


def cmd_detect(cfg: RunConfig) -> int:
    o = cfg.options
    _require(o, "input")
    model = parse_noise(o["noise"])
    img = load_pgm(o["input"])
    image = image_to_observed(img, o["r"], o.get("baseline"), o.get("n"), o["sigma"])
    N, r, sigma = image.N, o["r"], o["sigma"]
    unc = uncertainty_check(model, r / sigma, N)
    body = {"N": N, "r": r, "mode": o["phi_mode"], "uncertainty": unc.to_dict(),
            "never_reject_bound": never_reject_bound(N), "p_E_at_r_over_2": error_probability(model, sigma, r / 2)}
    tau0 = None
    if unc.detectable:
        tau0 = _schedule_tau0(model, o, N)
    if not unc.detectable or tau0 >= r:
        body.update(decision="not_detectable", reject=False, tau0=tau0, schedule=[], statistic=None, phi=None,
                    side="both", K0=None,
                    reason=f"signal-to-noise ratio r/sigma = {r / sigma:g} is below the detectability bound on T^({N})")
        write_json(os.path.join(cfg.out, "detection_report.json"), _envelope(cfg, "detection_report", body))
        print(f"not detectable: P(0 < eps < {r / sigma:g}) = {unc.lhs:.6g} <= {unc.rhs:.6g}", file=sys.stderr)
        return EXIT_UNDETECTABLE
    schedule = dyadic_schedule(r, tau0, N)
    if o["phi_mode"] == "theory":
        provider = TheoryPhi(model, sigma, N, o["k0_factor"])
        if o.get("k0") is not None:
            K0 = o["k0"]
            provider = lambda a, level: K0 * math.log(N)  # noqa: E731
    elif o.get("calibration"):
        with open(o["calibration"]) as fh:
            provider = CalibratedPhi(CalibrationTable.from_dict(json.load(fh)))
    else:
        levels = [o["alpha"] / k for k in range(1, len(schedule) + 1)]
        table = calibrate_schedule(N, schedule, model, sigma, o["alpha"], o["replicates"], o["seed"],
                                   levels, o["workers"])
        provider = CalibratedPhi(table)
    res = multi_test(image, r, tau0, provider, o["level_adjust"], o["alpha"])
    last = [d for d in res.decisions if not d.skipped]
    final = last[-1] if last else None
    K0 = None
    if o["phi_mode"] == "theory" and final is not None:
        K0 = o["k0"] if o.get("k0") is not None else phi_theory(
            N, error_probability(model, sigma, final.a), o["k0_factor"])[0]
    body.update(
        decision="reject" if res.overall_reject else "accept",
        reject=res.overall_reject,
        first_rejecting_k=res.first_rejecting_k,
        statistic=None if final is None else max(final.T_plus, final.T_minus),
        phi=None if final is None else final.phi,
        K0=K0,
        side="both",
        tau0=tau0,
        k_max=res.k_max,
        family_size=res.family_size,
        per_test_level=res.per_test_level,
        crossing_levels=list(res.crossing_levels),
        schedule=[asdict(d) for d in res.decisions],
    )
    write_json(os.path.join(cfg.out, "detection_report.json"), _envelope(cfg, "detection_report", body))
    print(f"{body['decision']}: k={res.first_rejecting_k} T={body['statistic']} phi={body['phi']}")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    o = cfg.options
    _require(o, "n")
    model = parse_noise(o["noise"])
    picture = square_indicator(o["n"], o["side"], o["intensity"])
    observed = apply_noise(picture, o["sigma"], model, o["seed"])
    img = observed_to_image(observed.values, o["r"], o["maxval"])
    name = "image.pgm"
    save_pgm(img, os.path.join(cfg.out, name), plain=o["plain"])
    body = {"image": name, "maxval": o["maxval"], "quantization_step": 2 * o["r"] / o["maxval"],
            "clipped_sites": int(np.count_nonzero(np.abs(observed.values) > o["r"]))}
    write_json(os.path.join(cfg.out, "simulate.json"), _envelope(cfg, "simulation", body))
    print(os.path.join(cfg.out, name))
    return EXIT_OK


def cmd_calibrate(cfg: RunConfig) -> int:
    o = cfg.options
    _require(o, "n")
    model = parse_noise(o["noise"])
    N = o["n"]
    taus = o.get("tau") or dyadic_schedule(o["r"], _schedule_tau0(model, o, N), N)
    levels = [o["alpha"] / k for k in range(1, len(taus) + 1)]
    table = calibrate_schedule(N, taus, model, o["sigma"], o["alpha"], o["replicates"], o["seed"], levels,
                               o["workers"])
    payload = _envelope(cfg, "calibration_table", table.to_dict())
    write_json(os.path.join(cfg.out, "calibration.json"), payload)
    for e in table.entries:
        print(f"tau={e.tau:.6g} phi={e.phi:g}")
    return EXIT_OK


def cmd_uncertainty(cfg: RunConfig) -> int:
    o = cfg.options
    _require(o, "n")
    model = parse_noise(o["noise"])
    N, sigma = o["n"], o["sigma"]
    rho = o["rho"] if o.get("rho") is not None else o["r"] / sigma
    rep = uncertainty_check(model, rho, N)
    body = {"uncertainty": rep.to_dict(), "never_reject_bound": never_reject_bound(N),
            "tau0": tau0_from_uncertainty(model, sigma, N), "s_max": list(s_max()),
            "weak_bound_constant": list(weak_bound_constant())}
    if not model.is_discrete:
        body["weak_bound_rho"] = weak_uncertainty_bound(model, N)
    write_json(os.path.join(cfg.out, "uncertainty.json"), _envelope(cfg, "uncertainty_report", body))
    print(f"rho={rho:g} N={N} lhs={rep.lhs:.6g} rhs={rep.rhs:.6g} detectable={rep.detectable}")
    return EXIT_OK


def cmd_errors(cfg: RunConfig) -> int:
    o = cfg.options
    model = parse_noise(o["noise"])
    fit = estimate_error_rates(
        o["ns"], SquareSignal(o["side_fraction"], o["intensity"]), model, o["sigma"], o["tau"],
        o["phi_mode"], o["replicates"], o["seed"], K0=o.get("k0"), alpha_target=o["alpha"], workers=o["workers"],
    )
    rows = [dict(N=N, phi=p, side=s, alpha_hat=a, beta_hat=b)
            for N, p, s, a, b in zip(fit.Ns, fit.phi, fit.side, fit.alpha_hat, fit.beta_hat)]
    env = _envelope(cfg, "error_rates", {"fit": fit.to_dict()})
    write_csv(os.path.join(cfg.out, "error_rates.csv"), rows, {"seed": o["seed"], "config_hash": env["config_hash"]})
    write_json(os.path.join(cfg.out, "error_rates.json"), env)
    for row in rows:
        print(row)
    return EXIT_OK


def cmd_perclab(cfg: RunConfig) -> int:
    o = cfg.options
    task = o["task"]
    meta = {"seed": o["seed"], "config_hash": cfg.digest()}
    if task == "stats":
        _require(o, "n")
        rows, reports = [], []
        for i, p in enumerate(o["p"]):
            st = estimate_cluster_stats(o["n"], p, o["replicates"], o["seed"] + i, o["bootstrap"], workers=o["workers"])
            rows += [dict(p=p, n=k + 1, tail=float(t)) for k, t in enumerate(st.tail)]
            rep = {"stats": st.summary(), "log_tail_r2": log_tail_r2(st)}
            if p < 0.5:
                rep["bounds"] = verify_lambda_bound(st).to_dict()
            reports.append(rep)
        write_csv(os.path.join(cfg.out, "tails.csv"), rows, meta)
        write_json(os.path.join(cfg.out, "perclab.json"), _envelope(cfg, "perclab_stats", {"runs": reports}))
    elif task == "crossing":
        _require(o, "n")
        rows = [dict(p=p, crossing_frequency=crossing_frequency(o["n"], p, o["replicates"], o["seed"] + i))
                for i, p in enumerate(o["p"])]
        write_csv(os.path.join(cfg.out, "crossing.csv"), rows, meta)
        write_json(os.path.join(cfg.out, "perclab.json"), _envelope(cfg, "perclab_crossing", {"rows": rows}))
    else:
        table = complexity_probe(o["ns"], o["mode"], o["seed"])
        write_csv(os.path.join(cfg.out, "complexity.csv"), table.rows, meta)
        # wall times vary between runs; keep them out of the replayable JSON
        body = table.to_dict()
        body["rows"] = [{k: v for k, v in row.items() if k != "elapsed"} for row in table.rows]
        write_json(os.path.join(cfg.out, "perclab.json"), _envelope(cfg, "perclab_complexity", body))
    print(os.path.join(cfg.out, "perclab.json"))
    return EXIT_OK


_DISPATCH = {
    "detect": cmd_detect,
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "uncertainty": cmd_uncertainty,
    "errors": cmd_errors,
    "perclab": cmd_perclab,
}


def _error(kind, exc, command, out=None) -> int:
    record = {"schema_version": SCHEMA_VERSION, "kind": "error", "error": kind,
              "message": str(exc), "command": command}
    print(json.dumps(record, sort_keys=True))
    if out and os.path.isdir(out):
        try:
            write_json(os.path.join(out, "error.json"), record)
        except OSError:
            pass
    return EXIT_ERROR


def run(cfg: RunConfig) -> int:
    os.makedirs(cfg.out, exist_ok=True)
    return _DISPATCH[cfg.command](cfg)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        ns = _apply_config(parser, argv)
        if ns.command is None:
            raise UsageError("a command is required")
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"percdetect: error: {exc}", file=sys.stderr)
        return _error("usage", exc, argv[0] if argv else None)
    except OSError as exc:
        print(f"percdetect: error: {exc}", file=sys.stderr)
        return _error("io", exc, None)
    options = {k: v for k, v in vars(ns).items() if k != "command"}
    cfg = RunConfig(ns.command, options)
    try:
        return run(cfg)
    except UsageError as exc:
        print(f"percdetect {cfg.command}: error: {exc}", file=sys.stderr)
        return _error("usage", exc, cfg.command, cfg.out)
    except (ValueError, OSError, KeyError) as exc:
        print(f"percdetect {cfg.command}: error: {exc}", file=sys.stderr)
        return _error(type(exc).__name__, exc, cfg.command, cfg.out)


if __name__ == "__main__":
    sys.exit(main())
