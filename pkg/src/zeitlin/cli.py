"""Command line entry point.

Exit codes: 0 success, 2 a check ran and missed its tolerance, 1 anything
else (bad arguments, bad config, runtime failure).

Options may also come from ``--config FILE`` (JSON, or TOML by extension).
Keys are option names with underscores; a table named after the command
(``[remainder]`` or ``[remainder.sphere]``) overrides top-level keys, and
flags given on the command line override both.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

from . import __version__

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    """Invalid option value; the message names the offending field."""


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# output


def _fmt_float(v: float) -> str:
    if not math.isfinite(v):
        return "null"
    return format(v, ".17g")


def dumps(obj: Any, indent: int = 2, _level: int = 0) -> str:
    """Deterministic JSON: sorted keys, floats with 17 significant digits."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(obj[k], indent, _level + 1)}" for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(x, (dict, list, tuple)) for x in obj):
            return "[" + ", ".join(dumps(x, indent, _level + 1) for x in obj) + "]"
        return "[\n" + ",\n".join(pad + dumps(x, indent, _level + 1) for x in obj) + "\n" + end + "]"
    if isinstance(obj, np.ndarray):
        return dumps(obj.tolist(), indent, _level)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, (complex, np.complexfloating)):
        return dumps({"re": obj.real, "im": obj.imag}, indent, _level)
    if obj is None:
        return "null"
    return json.dumps(str(obj))


def _emit(payload: dict, out: Optional[str]) -> None:
    text = dumps(payload) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# option parsing


def _int_list(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    return [int(v) for v in str(text).split(",") if v.strip()]


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(v)


@dataclass
class Option:
    flags: tuple
    dest: str
    convert: Callable
    default: Any = None
    help: str = ""
    choices: Optional[tuple] = None
    flag: bool = False


_COMMON = [
    Option(("--out",), "out", str, None, "output path (stdout when omitted)"),
    Option(("--scale",), "scale", str, "dimension", "bracket scale convention", ("dimension", "shifted")),
    Option(("--workers",), "workers", int, None, "worker processes (default: available cores)"),
    Option(("--cache-dir",), "cache_dir", str, None, "structure-constant cache directory"),
]

_SEED = Option(("--seed",), "seed", int, 0, "RNG seed")

COMMANDS: dict[str, list[Option]] = {
    "wigner eval": [
        Option(("--threej",), "threej", _bool, False, "evaluate a 3j symbol", flag=True),
        Option(("--sixj",), "sixj", _bool, False, "evaluate a 6j symbol", flag=True),
    ],
    "structconst build": [
        Option(("--N",), "N", int, None, "level (matrix size)"),
        Option(("--level",), "level", str, "discrete", "", ("discrete", "continuous")),
    ],
    "structconst verify": [
        Option(("--N",), "N", int, None, "level (matrix size)"),
        Option(("--tol",), "tol", float, 1e-8, "residual tolerance"),
    ],
    "simulate": [
        Option(("--N",), "N", int, None, "level"),
        Option(("--dt",), "dt", float, 1e-3, "time step"),
        Option(("--T",), "T", float, 1.0, "final time"),
        Option(("--integrator",), "integrator", str, "isospectral", "", ("isospectral", "rk4")),
        _SEED,
        Option(("--stride",), "stride", int, 1, "steps between diagnostics"),
        Option(("--csv",), "csv", str, None, "diagnostics CSV path"),
        Option(("--traj",), "traj", str, None, "trajectory npz path"),
        Option(("--max-drift",), "max_drift", float, None, "fail (exit 2) above this relative drift"),
    ],
    "measure sample": [
        Option(("--N",), "N", int, None, "level"), Option(("--count",), "count", int, 1000, ""), _SEED,
        Option(("--samples",), "samples", str, None, "write raw real coordinates (.npy)"),
    ],
    "measure covariance": [
        Option(("--N",), "N", int, 3, "level"), Option(("--count",), "count", int, 100000, ""), _SEED,
        Option(("--nsigma",), "nsigma", float, 4.0, ""),
    ],
    "measure wick": [
        Option(("--N",), "N", int, 5, "level"), Option(("--count",), "count", int, 20000, ""), _SEED,
        Option(("--nsigma",), "nsigma", float, 4.0, ""),
    ],
    "measure gibbs": [
        Option(("--N",), "N", int, None, "level"), Option(("--count",), "count", int, 10000, ""), _SEED,
        Option(("--gamma",), "gamma", float, 0.1, ""), Option(("--pcas",), "pcas", int, 4, ""),
    ],
    "measure circulation": [
        Option(("--curve",), "curve", str, "latitude:0.8", "e.g. latitude:0.8, great_circle:0.7,0.3"),
        Option(("--L",), "L", int, 24, "band limit"), Option(("--count",), "count", int, 4000, ""), _SEED,
        Option(("--nsigma",), "nsigma", float, 4.0, ""),
    ],
    "remainder sphere": [
        Option(("--Ns",), "Ns", _int_list, [5, 9, 17, 33], "comma-separated levels"),
        Option(("--kappa",), "kappa", float, 4.0, "Sobolev exponent"),
        _SEED, Option(("--mc-count",), "mc_count", int, 0, "Monte Carlo cross-check samples per N"),
        Option(("--csv",), "csv", str, None, "CSV export path"),
    ],
    "remainder torus": [
        Option(("--Ns",), "Ns", _int_list, [5, 9, 17, 33], "comma-separated levels"),
        Option(("--s",), "s", float, 5.0, "Sobolev exponent"),
        Option(("--wrap",), "wrap", _bool, True, "wrap n-k mod N in the discrete bracket"),
        _SEED, Option(("--mc-count",), "mc_count", int, 0, "Monte Carlo cross-check samples per N"),
        Option(("--csv",), "csv", str, None, "CSV export path"),
    ],
    "plot": [
        Option(("--report",), "report", str, None, "remainder report JSON"),
    ],
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    top = _Parser(prog="zeitlin", description="Zeitlin su(N) Euler laboratory")
    top.add_argument("--version", action="version", version=__version__)
    sub = top.add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    groups: dict[str, Any] = {}
    for name, opts in COMMANDS.items():
        head, _, tail = name.partition(" ")
        if tail:
            if head not in groups:
                groups[head] = sub.add_parser(head).add_subparsers(dest="sub", required=True,
                                                                   parser_class=_Parser)
            p = groups[head].add_parser(tail)
        else:
            p = sub.add_parser(head)
        p.add_argument("--config", default=argparse.SUPPRESS)
        for o in _COMMON + opts:
            kw = {"dest": o.dest, "default": argparse.SUPPRESS, "help": o.help}
            if o.flag:
                p.add_argument(*o.flags, action="store_const", const=True, **kw)
            else:
                p.add_argument(*o.flags, type=str, **kw)
        if name == "wigner eval":
            p.add_argument("twice", nargs=6, type=int, help="six arguments given as 2j / 2m")
    return top


@dataclass
class RunConfig:
    command: str
    params: dict = field(default_factory=dict)
    config_path: Optional[str] = None


def _load_config(path: str) -> dict:
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from exc
    try:
        if p.suffix.lower() == ".toml":
            data = tomllib.loads(raw.decode())
        else:
            data = json.loads(raw)
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigError(f"config: cannot parse {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be a table/object")
    return data


def _merge(command: str, cli: dict, cfg: dict) -> dict:
    opts = {o.dest: o for o in _COMMON + COMMANDS[command]}
    head = command.split(" ")[0]
    layers = [("", {k: v for k, v in cfg.items() if not isinstance(v, dict)})]
    if isinstance(cfg.get(head), dict):
        sec = cfg[head]
        layers.append((head + ".", {k: v for k, v in sec.items() if not isinstance(v, dict)}))
        tail = command.partition(" ")[2]
        if tail and isinstance(sec.get(tail), dict):
            layers.append((f"{head}.{tail}.", sec[tail]))
    merged = {k: o.default for k, o in opts.items()}
    for prefix, layer in layers:
        for k, v in layer.items():
            if k not in opts:
                if k not in _ALL_DESTS:
                    raise ConfigError(f"config field '{prefix}{k}': unknown option")
                continue  # shared file; the key belongs to another command
            merged[k] = _convert(opts[k], v, f"config field '{prefix}{k}'")
    for k, v in cli.items():
        if k in opts:
            merged[k] = _convert(opts[k], v, f"option {opts[k].flags[0]}")
        else:
            merged[k] = v
    return merged


_ALL_DESTS = {o.dest for opts in COMMANDS.values() for o in opts} | {o.dest for o in _COMMON}


def _convert(o: Option, v, where: str):
    if v is None:
        return None
    try:
        out = o.convert(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: cannot interpret {v!r}") from None
    if o.choices and out not in o.choices:
        raise ConfigError(f"{where}: must be one of {', '.join(o.choices)}")
    return out


def _require(params: dict, *names):
    for n in names:
        if params.get(n) is None:
            raise ConfigError(f"option --{n}: required")


# ---------------------------------------------------------------------------
# commands


@contextmanager
def _mapper(workers: Optional[int], tasks: int):
    n = workers if workers is not None else (os.cpu_count() or 1)
    n = max(1, min(n, tasks))
    if n == 1:
        yield map
    else:
        with ProcessPoolExecutor(max_workers=n) as ex:
            yield ex.map


def _cmd_wigner(p: dict) -> tuple[dict, int]:
    from . import wigner

    if p["threej"] == p["sixj"]:
        raise ConfigError("option --threej/--sixj: choose exactly one")
    tw = p["twice"]
    args = [Fraction(t, 2) for t in tw]
    if p["threej"]:
        value = wigner.three_j(*args)
        exact = wigner.three_j_exact(*args)
        kind = "3j"
    else:
        value = wigner.six_j(*args)
        exact = wigner.six_j_exact(*args)
        kind = "6j"
    sign, sq = exact
    return {"symbol": kind, "twice": list(tw), "value": value,
            "exact": "0" if sign == 0 else f"{'-' if sign < 0 else ''}sqrt({sq})",
            "exact_value": wigner.exact_to_float(exact)}, 0


def _cmd_structconst_build(p: dict) -> tuple[dict, int]:
    from .cache import cached_tables
    from .structconst import save_table

    _require(p, "N")
    disc, cont = cached_tables(p["N"], p["scale"], p["cache_dir"])
    table = disc if p["level"] == "discrete" else cont
    rep = {"N": p["N"], "level": p["level"], "scale": p["scale"] if p["level"] == "discrete" else None,
           "entries": len(table), "checksum": table.checksum()}
    if p["out"]:
        save_table(table, p["out"])
        rep["path"] = p["out"]
    return rep, 0


def _cmd_structconst_verify(p: dict) -> tuple[dict, int]:
    from . import basis as B
    from .cache import cached_tables
    from .structconst import (TripleIndex, bracket_scale, continuous_C, discrete_C,
                              discrete_C_expanded)

    _require(p, "N")
    N, tol = p["N"], p["tol"]
    disc, cont = cached_tables(N, p["scale"], p["cache_dir"])
    basis = B.build_basis(N)
    sN = bracket_scale(N, p["scale"])
    res = {
        "orthonormality": B.orthonormality_residual(basis),
        "bracket_closure": B.bracket_closure_residual(basis, disc, sN),
    }
    quad = form = 0.0
    lmax = min(4, N - 1)
    for l in range(1, lmax + 1):
        for lp in range(1, lmax + 1):
            for lb in range(abs(l - lp) + 1, min(l + lp, lmax) + 1, 2):
                for m in range(-l, l + 1):
                    for mp in range(-lp, lp + 1):
                        if abs(m + mp) > lb:
                            continue
                        idx = TripleIndex(l, m, lp, mp, lb, m + mp)
                        quad = max(quad, abs(B.quadrature_bracket_oracle(idx) - continuous_C(idx)))
                        if mp == -lp:
                            form = max(form, abs(discrete_C(N, idx, p["scale"], check=False)
                                                 - discrete_C_expanded(N, idx, p["scale"])))
    res["quadrature_oracle"] = quad
    res["expanded_form"] = form
    passed = all(v <= tol for v in res.values())
    return {"N": N, "scale": p["scale"], "tol": tol, "residuals": res, "pass": passed}, 0 if passed else 2


def _cmd_simulate(p: dict) -> tuple[dict, int]:
    from .dynamics import FlowConfig, relative_drift, save_trajectory, simulate, write_diagnostics_csv
    from .measures import sample_mu

    _require(p, "N")
    cfg = FlowConfig(p["N"], p["dt"], p["T"], p["integrator"], p["scale"], p["stride"])
    W0 = sample_mu(p["N"], 1, p["seed"], "simulate").matrices[0]
    traj = simulate(W0, cfg)
    drift = relative_drift(traj)
    if p["csv"]:
        write_diagnostics_csv(traj, p["csv"])
    if p["traj"]:
        save_trajectory(traj, p["traj"])
    rep = {"N": p["N"], "dt": p["dt"], "T": p["T"], "integrator": p["integrator"], "seed": p["seed"],
           "steps": cfg.steps, "drift": drift}
    code = 0
    if p["max_drift"] is not None:
        watched = ["H", "M"] + [f"C_{k}" for k in range(2, min(4, cfg.k_max) + 1)]
        rep["pass"] = all(drift[k] <= p["max_drift"] for k in watched)
        code = 0 if rep["pass"] else 2
    return rep, code


def _cmd_measure(sub: str, p: dict) -> tuple[dict, int]:
    from . import measures as Ms

    if sub == "circulation":
        curve = Ms.CurveSpec.parse(p["curve"])
        theory = Ms.circulation_variance(curve, p["L"])
        var, err, _ = Ms.circulation_mc(curve, p["L"], p["count"], p["seed"])
        z = (var - theory.variance) / err
        passed = abs(z) <= p["nsigma"]
        return {"curve": p["curve"], "L": p["L"], "count": p["count"], "seed": p["seed"],
                "spectral_variance": theory.variance, "tail_estimate": theory.tail_estimate,
                "decay_exponent": theory.decay_exponent, "mc_variance": var, "mc_stderr": err,
                "z": z, "pass": passed}, 0 if passed else 2
    if sub == "covariance":
        ens = Ms.sample_mu(p["N"], p["count"], p["seed"])
        r = Ms.covariance_check(ens, p["nsigma"])
        return {"N": p["N"], "count": r.count, "seed": p["seed"], "max_abs_deviation": r.max_abs_deviation,
                "max_z": r.max_z, "nsigma": r.nsigma, "pass": r.passed}, 0 if r.passed else 2
    if sub == "wick":
        ens = Ms.sample_mu(p["N"], p["count"], p["seed"], "wick")
        r = Ms.wick_check(ens, nsigma=p["nsigma"])
        rows = [{"quad": list(q), "estimate": e, "expected": x, "sigma_re": sr, "sigma_im": si}
                for q, e, x, sr, si in zip(r.quadruples, r.estimates, r.expected, r.sigma_re, r.sigma_im)]
        return {"N": p["N"], "count": p["count"], "seed": p["seed"], "quadruples": rows,
                "max_z": r.max_z, "pass": r.passed}, 0 if r.passed else 2
    _require(p, "N")
    ens = Ms.sample_mu(p["N"], p["count"], p["seed"])
    if sub == "sample":
        if p["samples"]:
            np.save(p["samples"], ens.real)
        x = ens.real
        return {"N": p["N"], "count": p["count"], "seed": p["seed"],
                "mean": x.mean(axis=0), "mean_stderr": x.std(axis=0, ddof=1) / np.sqrt(ens.count),
                "second_moment": np.mean(x ** 2, axis=0)}, 0
    if sub == "gibbs":
        ens_w, r = Ms.gibbs_reweight(ens, p["gamma"], p["pcas"])
        mean, err = Ms.ordered_eigenvalue_stats(ens_w)
        return {"N": p["N"], "count": p["count"], "seed": p["seed"], "gamma": r.gamma, "pcas": r.p_cas,
                "Z": r.Z_estimate, "Z_stderr": r.Z_stderr, "ess": r.ess, "ess_fraction": r.ess_fraction,
                "eigenvalue_mean": mean, "eigenvalue_stderr": err}, 0
    raise UsageError(f"unknown measure command {sub}")


def _rate_payload(rep, kind: str, exponent_name: str, exponent: float) -> dict:
    return {"kind": kind, exponent_name: exponent, "Ns": rep.Ns, "values": rep.values,
            "fitted_exponent": rep.fitted_exponent, "envelope_constant": rep.constant,
            "bound_values": rep.bound_values, "decreasing": rep.decreasing,
            "below_envelope": rep.below_envelope, "pass": rep.passed, "extra": rep.extra}


def _cmd_remainder(sub: str, p: dict) -> tuple[dict, int]:
    from . import remainder as R

    if p["cache_dir"]:
        os.environ["ZEITLIN_CACHE_DIR"] = p["cache_dir"]  # inherited by worker processes
    with _mapper(p["workers"], len(p["Ns"])) as mapper:
        if sub == "sphere":
            rep = R.rate_check_sphere(p["Ns"], p["kappa"], p["scale"], mapper=mapper)
            out = _rate_payload(rep, "sphere", "kappa", p["kappa"])
        else:
            rep = R.rate_check_torus(p["Ns"], p["s"], p["wrap"], mapper=mapper)
            out = _rate_payload(rep, "torus", "s", p["s"])
    if p["mc_count"]:
        mc = []
        for N in p["Ns"]:
            if sub == "sphere":
                mc.append(R.mc_remainder_sq(N, p["kappa"], p["mc_count"], p["seed"], p["scale"]))
            else:
                mc.append(R.mc_torus_remainder_sq(N, p["s"], p["mc_count"], p["seed"], p["wrap"]))
        out["mc_estimate"] = [m[0] for m in mc]
        out["mc_stderr"] = [m[1] for m in mc]
        out["seed"] = p["seed"]
    if p["csv"]:
        with open(p["csv"], "w") as fh:
            fh.write("N,value,bound\n")
            for N, v, b in zip(rep.Ns, rep.values, rep.bound_values):
                fh.write(f"{int(N)},{_fmt_float(v)},{_fmt_float(b)}\n")
    return out, 0 if rep.passed else 2


def gnuplot_script(report: dict) -> str:
    rows = "\n".join(f"{int(N)} {_fmt_float(v)} {_fmt_float(b)}"
                     for N, v, b in zip(report["Ns"], report["values"], report["bound_values"]))
    label = report.get("kind", "remainder")
    return (
        "set logscale xy\n"
        "set xlabel 'N'\n"
        f"set ylabel 'E ||r^N||^2 ({label})'\n"
        "set key top right\n"
        f"$data << EOD\n{rows}\nEOD\n"
        "plot $data using 1:2 with linespoints title 'value', "
        "$data using 1:3 with lines dashtype 2 title 'calibrated envelope'\n"
    )


def _cmd_plot(p: dict) -> tuple[Optional[dict], int]:
    _require(p, "report")
    try:
        report = json.loads(Path(p["report"]).read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"option --report: cannot read report: {exc}") from exc
    if isinstance(report.get("result"), dict):
        report = report["result"]
    for key in ("Ns", "values", "bound_values"):
        if key not in report:
            raise ConfigError(f"option --report: missing field '{key}'")
    script = gnuplot_script(report)
    if p["out"]:
        Path(p["out"]).write_text(script)
    else:
        sys.stdout.write(script)
    return None, 0


def run(config: RunConfig) -> int:
    cmd = config.command
    p = config.params
    head, _, sub = cmd.partition(" ")
    if cmd == "wigner eval":
        rep, code = _cmd_wigner(p)
    elif cmd == "structconst build":
        rep, code = _cmd_structconst_build(p)
    elif cmd == "structconst verify":
        rep, code = _cmd_structconst_verify(p)
    elif cmd == "simulate":
        rep, code = _cmd_simulate(p)
    elif head == "measure":
        rep, code = _cmd_measure(sub, p)
    elif head == "remainder":
        rep, code = _cmd_remainder(sub, p)
    elif cmd == "plot":
        rep, code = _cmd_plot(p)
    else:
        raise UsageError(f"unknown command {cmd}")
    if rep is not None:
        rep = {"command": cmd, "version": __version__, "result": rep}
        _emit(rep, p.get("out") if cmd not in ("structconst build",) else None)
    return code


def parse_config(argv) -> RunConfig:
    ns = vars(build_parser().parse_args(argv))
    command = ns.pop("cmd")
    if "sub" in ns:
        command = f"{command} {ns.pop('sub')}"
    path = ns.pop("config", None)
    cfg = _load_config(path) if path else {}
    return RunConfig(command, _merge(command, ns, cfg), path)


def main(argv=None) -> int:
    try:
        config = parse_config(sys.argv[1:] if argv is None else argv)
        return run(config)
    except (UsageError, ConfigError) as exc:
        print(f"zeitlin: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001  top-level runtime failure
        print(f"zeitlin: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
