"""Command-line entry point.

Every data file starts with a ``# config_hash=...`` line and contains no
timing information, so reruns with the same config and seed are
byte-identical; wall time goes to the ``<out>.run.json`` sidecar.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import io
import json
import math
import sys
import time

import numpy as np

from . import __version__
from .bound import COMPONENTS, BoundParams, bound_schedule, theorem2_bound
from .capacity import capacity
from .config import config_hash, load_config
from .dual import dual_minimize
from .errors import ConfigError, NoConvergence, VacuousBound
from .euclid import euclid_put, euclid_put_noisy
from .mc import McConfig, simulate_density_tail
from .put import inner_put, put_curve, put_exact

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return "%.17g" % x


def _csv(header, rows, digest):
    buf = io.StringIO()
    buf.write(f"# config_hash={digest}\n")
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    return buf.getvalue()


def _json(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _flat(m):
    return ";".join("%.17g" % v for v in np.ravel(m))


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text):
    out = []
    for v in _float_list(text):
        if v != int(v) or v < 1:
            raise argparse.ArgumentTypeError(f"expected positive integers, got {v}")
        out.append(int(v))
    return out


class _Run:
    """Collects outputs and writes them, with a run record next to each file."""

    def __init__(self, args, cfg):
        self.args = args
        self.digest = config_hash(cfg)
        self.start = time.perf_counter()

    def emit(self, text):
        out = self.args.out
        if out is None:
            sys.stdout.write(text)
            return
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        record = dict(command=self.args.command, config_hash=self.digest, seed=self.args.seed,
                      restarts=self.args.restarts, version=__version__,
                      wall_time=time.perf_counter() - self.start, outputs=[out])
        with open(out + ".run.json", "w", encoding="utf-8", newline="\n") as fh:
            fh.write(_json(record))


def _mechanism(cfg, leak, args):
    """Configured mechanism, or the optimized one at ``leak``."""
    if cfg.mechanism is not None:
        return cfg.mechanism
    res = put_exact(cfg.instance(leak), restarts=args.restarts, seed=args.seed)
    return res.best_system.privacy_mechanism


def _single_leak(cfg):
    if len(cfg.leak) != 1:
        raise ConfigError("this command needs a single leak value", "leak")
    return cfg.leak[0]


def cmd_capacity(args, cfg):
    run = _Run(args, cfg)
    try:
        res = capacity(cfg.channel)
    except NoConvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if args.json:
        run.emit(_json(dict(config_hash=run.digest, capacity=res.capacity,
                            optimal_input=res.optimal_input.probs.tolist(),
                            iterations=res.iterations, gap=res.gap)))
    else:
        run.emit(f"# config_hash={run.digest}\ncapacity = {res.capacity:.7f}\n"
                 f"optimal_input = {_flat(res.optimal_input.probs)}\n")
    return EXIT_OK


def cmd_put_curve(args, cfg):
    run = _Run(args, cfg)
    header = ["L", "f_value", "best_p_z_given_u_flattened", "i_vw", "i_zw", "i_uz", "restarts_agreeing"]
    rows = []
    if cfg.mechanism is None:
        curve = put_curve(cfg.instance(), cfg.leak, restarts=args.restarts, seed=args.seed)
    else:
        rate = cfg.tau * capacity(cfg.channel).capacity
        curve = [(leak, inner_put(cfg.source, cfg.mechanism, rate, leak,
                                  restarts=args.restarts, seed=args.seed)) for leak in cfg.leak]
    for leak, res in curve:
        rows.append([leak, res.value, _flat(res.best_system.privacy_mechanism.matrix),
                     res.i_vw, res.i_zw, res.i_uz, res.solver_trace.get("restarts_agreeing", 0)])
    run.emit(_csv(header, rows, run.digest))
    return EXIT_OK


def cmd_bound(args, cfg):
    run = _Run(args, cfg)
    leak = _single_leak(cfg)
    inst = cfg.instance(leak)
    mech = _mechanism(cfg, leak, args)
    rate = cfg.tau * capacity(cfg.channel).capacity
    put_value = inner_put(cfg.source, mech, rate, leak, restarts=args.restarts, seed=args.seed).value
    if args.lambda1 is None and args.lambda2 is None:
        dual = dual_minimize(cfg.source, mech, cfg.channel, cfg.tau, leak,
                             restarts=min(args.restarts, 16), seed=args.seed)
        lam1, lam2, _ = dual
        entries = bound_schedule(inst, mech, args.epsilon, args.k_list, dual=dual)
    else:
        lam1 = args.lambda1 or 0.0
        lam2 = args.lambda2 or 0.0
        entries = []
        g_value = None
        for k in args.k_list:
            params = BoundParams(lam1, lam2, math.sqrt(k), k, args.epsilon, cfg.tau, leak)
            res = theorem2_bound(cfg.source, mech, cfg.channel, params, g_value=g_value,
                                 restarts=args.restarts, seed=args.seed)
            g_value = res.components["g_term"]
            entries.append((k, res))
    header = ["k", "gamma", "lambda1", "lambda2", "bound", *COMPONENTS, "vacuous", "put_value"]
    rows = []
    vacuous = []
    for k, res in entries:
        rows.append([k, math.sqrt(k), lam1, lam2, res.bound, *(res.components[c] for c in COMPONENTS),
                     res.vacuous, put_value])
        if res.vacuous:
            vacuous.append(k)
    run.emit(_csv(header, rows, run.digest))
    if vacuous:
        print(f"warning: bound is vacuous at k = {', '.join(map(str, vacuous))}", file=sys.stderr)
        if args.strict:
            return EXIT_NUMERIC
    return EXIT_OK


def cmd_euclid(args, cfg):
    run = _Run(args, cfg)
    cap = capacity(cfg.channel).capacity
    header = ["rho", "L", "approx_value", "exact_value", "rel_gap"]
    rows = []
    for rho in args.rho_list:
        leak = rho * rho / 2.0
        if args.mode == "general":
            approx = euclid_put(cfg.source, cfg.tau * cap, rho, seed=args.seed).value
            inst = cfg.instance(leak)
        else:
            approx = euclid_put_noisy(cfg.source, rho, seed=args.seed).value
            # the noisy regime ties the rate budget to the leakage: tau C = rho^2 / 2
            inst = cfg.instance(leak).replace(tau=leak / cap)
        exact = math.nan
        gap = math.nan
        if not args.no_exact:
            exact = put_exact(inst, restarts=args.restarts, seed=args.seed).value
            gap = abs(approx - exact) / exact if exact > 0 else math.nan
        rows.append([rho, leak, approx, exact, gap])
    run.emit(_csv(header, rows, run.digest))
    return EXIT_OK


def cmd_simulate(args, cfg):
    run = _Run(args, cfg)
    leak = _single_leak(cfg)
    mech = _mechanism(cfg, leak, args)
    mc = McConfig(args.k, args.blocks, args.seed, args.delta)
    try:
        report = simulate_density_tail(cfg.source.marginal(0), mech, mc)
    except VacuousBound as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    out = dict(config_hash=run.digest, seed=args.seed, mechanism=mech.matrix.tolist(), **report.to_dict())
    run.emit(_json(out))
    return EXIT_OK


COMMANDS = {
    "capacity": cmd_capacity,
    "put-curve": cmd_put_curve,
    "bound": cmd_bound,
    "euclid": cmd_euclid,
    "simulate": cmd_simulate,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="putkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--seed", type=int, default=0, help="seed for all stochastic search (default 0)")
    parser.add_argument("--restarts", type=int, default=64, help="multi-start count (default 64)")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="problem config (JSON)")
        p.add_argument("--out", help="output file (default: stdout)")
        return p

    p = add("capacity", "channel capacity")
    p.add_argument("--json", action="store_true", help="emit JSON")

    add("put-curve", "exact tradeoff over the leak grid")

    p = add("bound", "finite-length converse bound")
    p.add_argument("--k-list", type=_int_list, default=[10**3, 10**6, 10**9], help="comma-separated k values")
    p.add_argument("--epsilon", type=float, default=0.1, help="type-I error level in (0, 1)")
    p.add_argument("--lambda1", type=float, help="fixed multiplier (default: dual minimizer)")
    p.add_argument("--lambda2", type=float, help="fixed multiplier (default: dual minimizer)")
    p.add_argument("--strict", action="store_true", help="exit 3 if any bound is vacuous")

    p = add("euclid", "high-privacy approximation")
    p.add_argument("--mode", choices=("general", "noisy"), default="general")
    p.add_argument("--rho-list", type=_float_list, default=[0.01, 0.02, 0.05])
    p.add_argument("--no-exact", action="store_true", help="skip the exact comparison column")

    p = add("simulate", "Monte Carlo check of the leakage concentration")
    p.add_argument("--k", type=int, default=1000)
    p.add_argument("--blocks", type=int, default=10**5)
    p.add_argument("--delta", type=float, default=0.2)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NoConvergence, VacuousBound) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
