"""Command line entry point: ``snakelab <subcommand> [options]``.

Every output starts with a ``# config:`` header line holding the full
configuration as JSON, so a file can be regenerated from its own header.
Exit codes: 0 success, 1 failed acceptance check, 2 bad usage or input,
3 resource guard tripped.
"""
import argparse
import configparser
import io
import json
import os
import sys
import tempfile

import numpy as np

from . import acceptance
from . import branching as B
from . import diffusion as D
from . import environment as E
from . import snake as S
from . import stats as st
from . import superprocess as SP
from . import walk as Wk
from .config import DEFAULT_SEED, THRESHOLDS, parallel_map
from .errors import ParameterError, ResourceError, SnakelabError

SUBCOMMANDS = ("env", "walk", "bpre", "diffusion", "rayknight", "snake", "super", "verify-all")


class UsageError(SnakelabError):
    pass


# ----------------------------------------------------------------------------
# output

class Output:
    """Collects text and writes it atomically to a path (or to stdout)."""

    def __init__(self, path, config):
        self.path = path
        self.buf = io.StringIO()
        self.buf.write("# config: " + json.dumps(config, sort_keys=True) + "\n")

    def write(self, text):
        self.buf.write(text)

    def row(self, *values):
        self.buf.write(",".join(_fmt(v) for v in values) + "\n")

    def close(self):
        data = self.buf.getvalue()
        if self.path in (None, "-"):
            sys.stdout.write(data)
            return
        folder = os.path.dirname(os.path.abspath(self.path))
        fd, tmp = tempfile.mkstemp(dir=folder, prefix=".snakelab-")
        with os.fdopen(fd, "w") as fh:
            fh.write(data)
        os.replace(tmp, self.path)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


# ----------------------------------------------------------------------------
# environment input

def _spec_from_args(args, length=None):
    return E.EnvironmentSpec(kind=args.kind, length=length or args.length, v_bound=args.v_bound,
                             sigma=args.sigma, hurst=args.hurst, seed=args.env_seed)


def _load_env(args, min_length=None):
    if args.env:
        if not os.path.exists(args.env):
            raise UsageError(f"environment file {args.env!r} not found")
        with open(args.env) as fh:
            env = E.read_env_jsonl(fh)
    else:
        env = E.generate_environment(_spec_from_args(args, max(args.length, min_length or 0)))
    if min_length is not None and env.last_site < min_length:
        raise UsageError(f"environment covers sites up to {env.last_site}, need {min_length}")
    return env


def _rescaled(args, min_length=None):
    env = _load_env(args, min_length)
    return E.rescale_env(env, args.n, E.compute_Dn(env.spec, args.n))


# ----------------------------------------------------------------------------
# subcommands

def cmd_env(args, out):
    env = _load_env(args)
    E.write_env_jsonl(env, out)


def cmd_walk(args, out):
    renv = _rescaled(args)
    if args.K is not None:
        path = Wk.simulate_reflected_walk(renv, args.K, args.excursions or args.n, args.seed)
    else:
        path = Wk.simulate_walk(renv, Wk.StopRule.parse(args.stop), args.seed)
    if args.masses:
        bp = Wk.extract_bpre(path, K=args.K)
        out.row("level", "mass")
        for i, m in enumerate(bp.masses):
            out.row(i, m)
        return
    out.row("step", "site")
    for j, s in enumerate(path.sites):
        out.row(j, int(s))


def cmd_bpre(args, out):
    gens = int(np.floor(args.n * args.delta))
    if args.fixed_b is not None:
        sched = B.fixed_geometric_schedule(args.fixed_b, args.n, gens)
        target = B.h_survival(args.fixed_b, args.delta)
    else:
        spec = _load_env(args, 1).spec
        sched = B.environment_schedule(spec, args.n)
        target = B.h_survival(B.matched_b(spec, args.n, args.delta), args.delta)
    est = B.survival_estimate(sched, args.n, args.delta, args.reps, args.seed)
    out.write(json.dumps({"n": args.n, "delta": args.delta, "replicas": est.replicas,
                          "survivors": est.survivors, "scaled": est.scaled, "ci": [est.ci_low, est.ci_high],
                          "h": target}) + "\n")


def cmd_diffusion(args, out):
    n = args.n
    half = args.window
    min_len = int(np.ceil(half * n)) + 2
    renv = _rescaled(args, min_len)
    pot = E.discrete_potential(renv, (-half, half))
    ds = args.ds or 1.0 / (10.0 * n ** 2)
    y = D.associated_batch(pot, args.horizon, ds, args.reps, args.seed)[:, 0]
    out.row("replica", "y")
    for r, v in enumerate(y):
        out.row(r, "dead" if np.isnan(v) else v)


def cmd_rayknight(args, out):
    """Walk masses and the time-changed Feller samples at t0, plus a KS report.

    ``--localtime`` adds the driving-path local-time route as a third column.
    """
    n = args.n
    level = int(round(args.t0 * n))
    nK = level + 1
    renv = _rescaled(args, nK + 1)
    K = nK / n
    walk = parallel_map(lambda r: Wk.reflected_upcounts(renv, K, n, args.seed, r)[level] / n,
                        range(args.reps), args.threads)
    pot = E.discrete_potential(renv, (0.0, K))
    cols = {"walk": np.asarray(walk), "feller": D.sample_H(pot, args.t0, args.reps, args.seed)}
    if args.localtime:
        cols["localtime"] = D.rk_rhs_sampler(pot, [args.t0], args.reps, args.seed).values[:, 0]
    out.row("replica", *cols)
    for r in range(args.reps):
        out.row(r, *[c[r] for c in cols.values()])
    if args.reps >= 20:
        for name in list(cols)[1:]:
            rep = st.ks_two_sample(cols["walk"], cols[name], f"walk vs {name}")
            out.write("# ks: " + rep.to_json() + "\n")


def cmd_snake(args, out):
    n = args.n
    nK = int(round(args.K * n))
    renv = _rescaled(args, nK + 1)
    contour = Wk.simulate_reflected_walk(renv, args.K, n, args.seed)
    sn = S.build_snake(contour, args.d, args.seed)
    out.row("level", "atom", *[f"x{k + 1}" for k in range(args.d)])
    for i in range(nK):
        for a, x in enumerate(S.measure_from_snake(sn, i).atoms):
            out.row(i, a, *x)


def cmd_super(args, out):
    n = args.n
    nK = int(round(args.K * n))
    renv = _rescaled(args, nK + 1)
    phi = SP.parse_test_function(args.phi, args.d)
    model = renv.base.spec.kind

    def one(r):
        run = SP.simulate_bbmre(renv, n, args.K, args.d, args.seed, r)
        return SP.decomposition(run, phi, model)

    out.row("replica", "t", "Z", "N", "M", "A", "residual")
    for r, dec in enumerate(parallel_map(one, range(args.reps), args.threads)):
        for row in dec.rows():
            out.row(r, *row)


def cmd_verify_all(args, out):
    only = [int(k) for k in args.only.split(",")] if args.only else None
    lines = []
    results = acceptance.run_all(args.seed, args.quick, only, args.threads, log=lambda s: print(s, file=sys.stderr))
    failed = False
    for k, title, reports, secs in results:
        for r in reports:
            failed |= not r.passed
            lines.append(json.dumps({"criterion": k, "title": title, "seconds": round(secs, 3),
                                     "report": json.loads(r.to_json())}, sort_keys=True))
    out.write("\n".join(lines) + "\n")
    return 1 if failed else 0


COMMANDS = {
    "env": cmd_env, "walk": cmd_walk, "bpre": cmd_bpre, "diffusion": cmd_diffusion,
    "rayknight": cmd_rayknight, "snake": cmd_snake, "super": cmd_super, "verify-all": cmd_verify_all,
}


# ----------------------------------------------------------------------------
# parsing

def _common(p):
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--out", default=None, help="output path (default stdout)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--config", default=None, help="INI file with a [snakelab] section of defaults")
    p.add_argument("--threshold", action="append", default=[], metavar="KEY=VALUE",
                   help="override an acceptance threshold")


def _env_args(p):
    p.add_argument("--env", default=None, help="environment JSONL file")
    p.add_argument("--kind", default="gaussian-hermite", choices=E.KINDS)
    p.add_argument("--length", type=int, default=4096)
    p.add_argument("--hurst", type=float, default=0.7)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--v-bound", type=float, default=0.25)
    p.add_argument("--env-seed", type=int, default=0)


def build_parser():
    parser = argparse.ArgumentParser(prog="snakelab", description="RWRE, branching and snake experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        _common(p)
        if name != "verify-all":
            _env_args(p)
        if name == "walk":
            p.add_argument("--stop", default="returns:100", help="steps:N, returns:k or local:a:r")
            p.add_argument("--K", type=float, default=None, help="reflect on {0..nK}")
            p.add_argument("--excursions", type=int, default=None)
            p.add_argument("--masses", action="store_true", help="emit extracted branching masses")
        elif name == "bpre":
            p.add_argument("--delta", type=float, default=0.5)
            p.add_argument("--fixed-b", type=float, default=None)
        elif name == "diffusion":
            p.add_argument("--horizon", type=float, default=1.0)
            p.add_argument("--ds", type=float, default=None)
            p.add_argument("--window", type=float, default=4.0)
        elif name == "rayknight":
            p.add_argument("--t0", type=float, default=0.25)
            p.add_argument("--localtime", action="store_true", help="add the local-time route")
        elif name in ("snake", "super"):
            p.add_argument("--K", type=float, default=1.0)
            p.add_argument("--d", type=int, default=2)
            if name == "super":
                p.add_argument("--phi", default="cos:1,0")
        elif name == "verify-all":
            p.add_argument("--quick", action="store_true")
            p.add_argument("--only", default=None, help="comma-separated criterion numbers")
    return parser


def _apply_config(parser, argv):
    """Re-parse with defaults taken from the --config file, if any."""
    args = parser.parse_args(argv)
    if not args.config:
        return args
    if not os.path.exists(args.config):
        raise UsageError(f"config file {args.config!r} not found")
    cp = configparser.ConfigParser()
    cp.read(args.config)
    if "snakelab" not in cp:
        raise UsageError("config file needs a [snakelab] section")
    known = vars(args)
    defaults = {}
    for key, value in cp["snakelab"].items():
        dest = key.replace("-", "_")
        if dest not in known:
            raise UsageError(f"unknown config key {key!r}")
        cur = known[dest]
        if isinstance(cur, bool):
            defaults[dest] = cp["snakelab"].getboolean(key)
        elif isinstance(cur, int):
            defaults[dest] = int(value)
        elif isinstance(cur, float):
            defaults[dest] = float(value)
        else:
            defaults[dest] = value
    sub = parser._subparsers._group_actions[0].choices[args.command]
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _apply_thresholds(pairs):
    for item in pairs:
        key, _, value = item.partition("=")
        if key not in THRESHOLDS:
            raise UsageError(f"unknown threshold {key!r}")
        THRESHOLDS[key] = float(value)


def main(argv=None):
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        _apply_thresholds(args.threshold)
        config = {k: v for k, v in sorted(vars(args).items()) if k != "out"}
        config["thresholds"] = dict(THRESHOLDS)
        out = Output(args.out, config)
        code = COMMANDS[args.command](args, out) or 0
        out.close()
        return code
    except (UsageError, ParameterError) as exc:
        print(f"snakelab: error: {exc}", file=sys.stderr)
        return 2
    except ResourceError as exc:
        print(f"snakelab: resource guard: {exc}", file=sys.stderr)
        return 3
    except SnakelabError as exc:
        print(f"snakelab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
