"""Command-line scenario runner.

    ricci-af simulate  --config run.json  [--out DIR] [--seed N] [--threads N]
    ricci-af certify   --config cert.json [--threshold X] [--out DIR]
    ricci-af c1-search --config search.json [--out DIR] [--seed N]
    ricci-af families

Configs are JSON. Every block is checked against a fixed schema before
anything runs; unknown keys, wrong types and out-of-range values are
reported as ``file:line: message`` and exit with status 1.

Exit codes: 0 ok or certificate pass, 1 usage/config error, 2 blowup,
3 stability abort, 4 certificate fail.
"""

import argparse
import json
import os
import sys

EXIT_OK, EXIT_CONFIG, EXIT_BLOWUP, EXIT_ABORT, EXIT_CERT_FAIL = 0, 1, 2, 3, 4
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


class ConfigError(Exception):
    """Schema violation; ``errors`` holds the formatted messages."""

    def __init__(self, errors):
        super().__init__("\n".join(errors))
        self.errors = list(errors)


# ----------------------------------------------------------------------------
# JSON with key positions

def key_lines(text):
    """Map each key path (a tuple) to the 1-based line of its key.

    The empty path maps to the line of the top-level value. Only called on
    text that ``json.loads`` already accepted.
    """
    lines = {(): 1}
    stack = []            # [kind, path, current key or index]
    expect_key = False
    pending = False       # an array element starts at the next token
    line, i, n = 1, 0, len(text)

    def value_path():
        if not stack:
            return ()
        kind, path, cur = stack[-1]
        return path + (cur,)

    while i < n:
        ch = text[i]
        if pending and not ch.isspace() and ch not in "]":
            lines.setdefault(value_path(), line)
            pending = False
        if ch == "\n":
            line += 1
        elif ch == '"':
            j = i + 1
            while text[j] != '"':
                j += 2 if text[j] == "\\" else 1
            if expect_key:
                key = json.loads(text[i:j + 1])
                stack[-1][2] = key
                lines[stack[-1][1] + (key,)] = line
                expect_key = False
            i = j
        elif ch in "{[":
            path = value_path()
            lines.setdefault(path, line)
            if ch == "{":
                stack.append(["obj", path, None])
                expect_key = True
            else:
                stack.append(["arr", path, 0])
                pending = True
        elif ch in "}]":
            stack.pop()
            expect_key = pending = False
        elif ch == ",":
            if stack[-1][0] == "obj":
                expect_key = True
            else:
                stack[-1][2] += 1
                pending = True
        i += 1
    return lines


def load_config(path):
    """``(data, lines)`` for a JSON config; decode errors become ConfigError."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError([f"{path}: cannot read config: {e.strerror}"]) from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError([f"{path}:{e.lineno}: invalid JSON: {e.msg} (column {e.colno})"]) from None
    return data, key_lines(text)


# ----------------------------------------------------------------------------
# schema

class Field:
    """One typed entry of a config block."""

    def __init__(self, kind, default=None, required=False, check=None, hint=""):
        self.kind = kind
        self.default = default
        self.required = required
        self.check = check
        self.hint = hint


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


_KINDS = {
    "number": _is_num,
    "int": _is_int,
    "bool": lambda v: isinstance(v, bool),
    "str": lambda v: isinstance(v, str),
    "dict": lambda v: isinstance(v, dict),
    "numbers": lambda v: isinstance(v, list) and all(_is_num(x) for x in v),
    "strs": lambda v: isinstance(v, list) and all(isinstance(x, str) for x in v),
    "number|auto": lambda v: _is_num(v) or v == "auto",
    "number|null": lambda v: v is None or _is_num(v),
}

_KIND_NAMES = {
    "number": "a number", "int": "an integer", "bool": "true or false",
    "str": "a string", "dict": "an object", "numbers": "a list of numbers",
    "strs": "a list of strings", "number|auto": 'a number or "auto"',
    "number|null": "a number or null",
}


def _pos(x):
    return x > 0


def _nonneg(x):
    return x >= 0


GRID = {
    "s_max": Field("number", required=True, check=_pos, hint="must be positive"),
    "M": Field("int", required=True, check=lambda m: m >= 8, hint="must be >= 8"),
    "kind": Field("str", "uniform", check=lambda k: k in ("uniform", "graded"),
                  hint='must be "uniform" or "graded"'),
    "beta": Field("number", 2.0, check=_pos, hint="must be positive"),
}

PROFILE = {
    "family": Field("str"),
    "n": Field("int", check=lambda n: n >= 2, hint="must be >= 2"),
    "params": Field("dict", {}),
    "tau": Field("number|null", None),
    "file": Field("str"),
}

FLOW = {
    "t_end": Field("number", 1.0, check=_pos, hint="must be positive"),
    "cfl": Field("number", 0.2, check=lambda c: 0 < c < 1, hint="must lie in (0, 1)"),
    "blowup_threshold": Field("number", 1e6, check=_pos, hint="must be positive"),
    "eps": Field("number|auto", 0.0, check=lambda e: e == "auto" or e >= 0,
                 hint='must be >= 0 or "auto"'),
    "monitor_every": Field("int", 100, check=lambda k: k >= 1, hint="must be >= 1"),
    "outer_bc": Field("str", "fixed_tail",
                      check=lambda b: b in ("fixed_tail", "extrapolated"),
                      hint='must be "fixed_tail" or "extrapolated"'),
    "sample_times": Field("numbers", []),
    "decay_levels": Field("numbers", []),
    "mu_horizon": Field("number|null", None),
    "sobolev": Field("bool", True),
    "max_steps": Field("int", 10_000_000, check=lambda k: k >= 1, hint="must be >= 1"),
}

BATTERY = {
    "bubbles": Field("int", 24, check=_nonneg, hint="must be >= 0"),
    "bumps": Field("int", 8, check=_nonneg, hint="must be >= 0"),
}

OUTPUT = {"dir": Field("str", "out")}

MONITORS = ("weighted_sobolev", "log_sobolev")

SEARCH = {
    "n": Field("int", required=True, check=lambda n: n >= 2,
               hint="must be >= 2"),
    "basis_dim": Field("int", 5, check=lambda k: k >= 1, hint="must be >= 1"),
    "sweep_dim": Field("int", 2, check=lambda k: 1 <= k <= 3, hint="must be 1, 2 or 3"),
    "sweep_points": Field("int", 30, check=lambda k: k >= 2, hint="must be >= 2"),
    "q_range": Field("numbers", [0.05, 2.0],
                     check=lambda q: len(q) == 2 and 0 < q[0] < q[1],
                     hint="must be [lo, hi] with 0 < lo < hi"),
    "starts": Field("int", 4, check=lambda k: k >= 1, hint="must be >= 1"),
    "budget": Field("int", 400, check=_nonneg, hint="must be >= 0"),
    "ceiling": Field("number|null", None),
}

COMMANDS = {
    "simulate": {"profile": PROFILE, "grid": GRID, "flow": FLOW, "battery": BATTERY,
                 "output": OUTPUT, "monitors": "strs", "seed": "int"},
    "certify": {"profile": PROFILE, "grid": GRID, "battery": BATTERY, "output": OUTPUT,
                "threshold": "number", "seed": "int"},
    "c1-search": {"search": SEARCH, "grid": GRID, "output": OUTPUT, "seed": "int"},
}
REQUIRED = {"simulate": ("profile",), "certify": ("profile",), "c1-search": ("search",)}


class Validator:
    def __init__(self, source, lines):
        self.source = source
        self.lines = lines
        self.errors = []

    def line(self, path):
        while path not in self.lines and path:
            path = path[:-1]
        return self.lines.get(path, 1)

    def error(self, path, msg):
        where = ".".join(str(p) for p in path) or "<top>"
        self.errors.append(f"{self.source}:{self.line(path)}: {where}: {msg}")

    def block(self, data, schema, path):
        if not isinstance(data, dict):
            self.error(path, "must be an object")
            return {}
        out = {}
        for key in data:
            if key not in schema:
                self.error(path + (key,), f"unknown key (allowed: {', '.join(sorted(schema))})")
        for key, fld in schema.items():
            if key not in data:
                if fld.required:
                    self.error(path, f"missing required key {key!r}")
                else:
                    out[key] = fld.default
                continue
            v = data[key]
            if not _KINDS[fld.kind](v):
                self.error(path + (key,), f"must be {_KIND_NAMES[fld.kind]}")
            elif fld.check is not None and v is not None and not fld.check(v):
                self.error(path + (key,), fld.hint)
            else:
                out[key] = v
        return out


def validate_config(command, data, lines, source="<config>"):
    """Checked and defaulted config for ``command``; raises ConfigError."""
    v = Validator(source, lines)
    blocks = COMMANDS[command]
    if not isinstance(data, dict):
        v.error((), "config must be a JSON object")
        raise ConfigError(v.errors)
    out = {}
    for key in data:
        if key not in blocks:
            v.error((key,), f"unknown key for {command} (allowed: {', '.join(sorted(blocks))})")
    for key in REQUIRED[command]:
        if key not in data:
            v.error((), f"missing required block {key!r}")
    for key, schema in blocks.items():
        if isinstance(schema, dict):
            if key in data:
                out[key] = v.block(data[key], schema, (key,))
            elif any(f.required for f in schema.values()):
                out[key] = None
            else:
                out[key] = v.block({}, schema, (key,))
        elif key in data:
            if not _KINDS[schema](data[key]):
                v.error((key,), f"must be {_KIND_NAMES[schema]}")
            else:
                out[key] = data[key]
    if command in ("simulate", "certify") and "profile" in data and isinstance(data["profile"], dict):
        _check_profile(v, data["profile"], data)
    for i, name in enumerate(out.get("monitors") or []):
        if name not in MONITORS:
            v.error(("monitors", i), f"unknown monitor {name!r} (allowed: {', '.join(MONITORS)})")
    if v.errors:
        raise ConfigError(v.errors)
    return out


def _check_profile(v, prof, data):
    p = ("profile",)
    has_file = "file" in prof
    has_family = "family" in prof
    if has_file == has_family:
        v.error(p, "give exactly one of 'family' or 'file'")
        return
    if has_family:
        from .geometry import FAMILIES
        if prof["family"] not in FAMILIES:
            v.error(p + ("family",), f"unknown family (known: {', '.join(sorted(FAMILIES))})")
        if "n" not in prof:
            v.error(p, "missing required key 'n'")
        if "grid" not in data:
            v.error((), "a family profile needs a 'grid' block")
    else:
        for key in ("n", "params", "tau"):
            if key in prof:
                v.error(p + (key,), "not allowed together with 'file'")


# ----------------------------------------------------------------------------
# commands

def _profile(cfg):
    from .geometry import Grid, make_profile, profile_from_json
    prof = cfg["profile"]
    if prof.get("file"):
        try:
            with open(prof["file"], encoding="utf-8") as fh:
                return profile_from_json(fh.read())
        except (OSError, ValueError, KeyError) as e:
            raise ConfigError([f"{prof['file']}: unreadable profile: {e}"]) from None
    g = cfg["grid"]
    grid = Grid(float(g["s_max"]), int(g["M"]), g["kind"], float(g["beta"]))
    try:
        return make_profile(prof["family"], prof["n"], grid, tau=prof["tau"],
                            **prof["params"])
    except (TypeError, ValueError) as e:
        raise ConfigError([f"profile.params: {e}"]) from None


def _battery(profile, cfg):
    from .functionals import default_battery
    b = cfg["battery"]
    return default_battery(profile, n_bubbles=b["bubbles"], n_bumps=b["bumps"])


def _write(outdir, name, text):
    from .flow import atomic_write
    atomic_write(os.path.join(outdir, name), text)


def cmd_simulate(cfg, outdir):
    from . import functionals as F
    from .flow import FlowConfig, initial_state, run_flow, write_run
    from .geometry import dumps, ProfileError

    profile = _profile(cfg)
    if profile.n < 3:
        raise ConfigError(["profile.n: the flow needs n >= 3"])
    fc = dict(cfg["flow"])
    fc["sample_times"] = tuple(fc["sample_times"])
    fc["decay_levels"] = tuple(fc["decay_levels"])
    try:
        config = FlowConfig(**fc)
    except ValueError as e:
        raise ConfigError([f"flow: {e}"]) from None
    battery = _battery(profile, cfg)
    monitor_rows = []

    def monitor(state, row):
        rec = {"t": state.t}
        if "weighted_sobolev" in cfg.get("monitors", []):
            rec["weighted_sobolev"] = F.weighted_sobolev_constant(state.profile, battery)
        if "log_sobolev" in cfg.get("monitors", []):
            C = F.euclidean_sobolev_constant(profile.n)
            tests = F.log_sobolev_battery(state.profile)
            rec["log_sobolev_min_slack"] = min(
                F.log_sobolev_check(state.profile, tf, C) for tf in tests)
        monitor_rows.append(rec)

    try:
        state = initial_state(profile, config.eps)
    except (ValueError, ProfileError) as e:
        raise ConfigError([f"profile: {e}"]) from None
    record = run_flow(state, config, monitors=(monitor,) if cfg.get("monitors") else ())
    write_run(record, outdir)
    final = record.rows[-1].as_dict() if record.rows else {}
    summary = {"status": record.status, "t_final": record.final.t, "steps": record.steps,
               "outer_bc": record.outer_bc, "events": record.events, "message": record.message,
               "seed": cfg.get("seed", 0), "final": final}
    if monitor_rows:
        summary["monitors"] = monitor_rows
    _write(outdir, "summary.json", dumps(summary))
    return {"ok": EXIT_OK, "blowup": EXIT_BLOWUP}.get(record.status, EXIT_ABORT)


def cmd_certify(cfg, outdir):
    from .functionals import certificate
    from .geometry import dumps
    profile = _profile(cfg)
    if profile.n < 3:
        raise ConfigError(["profile.n: the Sobolev machinery needs n >= 3"])
    if "threshold" not in cfg:
        raise ConfigError(["certify needs a threshold (config key or --threshold)"])
    rep = certificate(profile, cfg["threshold"], _battery(profile, cfg))
    text = dumps(rep)
    _write(outdir, "certificate.json", text)
    sys.stdout.write(text)
    return EXIT_OK if rep["verdict"] == "pass" else EXIT_CERT_FAIL


def cmd_c1_search(cfg, outdir):
    from .c1_search import SearchConfig, estimate_cn, lower_bound_witness, sweep_csv
    from .geometry import Grid, dumps, make_profile, profile_to_json
    s = dict(cfg["search"])
    n = s.pop("n")
    s["q_range"] = tuple(s["q_range"])
    s["seed"] = cfg.get("seed", 0)
    try:
        sc = SearchConfig(**s)
        res = estimate_cn(n, sc)
    except ValueError as e:
        raise ConfigError([f"search: {e}"]) from None
    _write(outdir, "sweep.csv", sweep_csv(res))
    g = cfg["grid"] or {}
    grid = Grid(float(g.get("s_max", 6.0)), int(g.get("M", 600)), g.get("kind", "uniform"),
                float(g.get("beta", 2.0)))
    witness = make_profile("neck", n, grid, params=res.best)
    _write(outdir, "witness_profile.json", profile_to_json(witness))
    chain = lower_bound_witness(res.best, n, sc.ceiling) if n >= 3 else None
    summary = {"n": n, "estimate": res.estimate, "margin": res.margin,
               "sweep_min": res.sweep_min, "starts": sc.starts, "budget": sc.budget,
               "seed": sc.seed, "evaluations": res.evaluations,
               "theta": [float(x) for x in res.best.theta],
               "label": "upper bound on the infimum over the searched family",
               "chain_holds": None if chain is None else chain["holds"]}
    _write(outdir, "summary.json", dumps(summary))
    return EXIT_OK


def cmd_families():
    from .geometry import FAMILIES
    for name in sorted(FAMILIES):
        sys.stdout.write(f"{name}: {FAMILIES[name][1]}\n")
    return EXIT_OK


# ----------------------------------------------------------------------------
# entry point

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="ricci-af", description="Ricci flow laboratory for radial AF metrics.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in ("simulate", "certify", "c1-search"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, metavar="PATH")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", metavar="DIR")
        sp.add_argument("--threads", type=int)
        if name == "certify":
            sp.add_argument("--threshold", type=float)
    sub.add_parser("families")
    return p


def _threads(arg):
    if arg is not None:
        return arg
    env = os.environ.get("RICCI_AF_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError([f"RICCI_AF_THREADS must be an integer, got {env!r}"]) from None
    return None


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        threads = _threads(getattr(args, "threads", None))
        if threads is not None:
            if threads < 1:
                raise ConfigError(["--threads must be >= 1"])
            # only reaches BLAS pools created after this point
            for var in THREAD_VARS:
                os.environ[var] = str(threads)
        if args.command == "families":
            return cmd_families()
        data, lines = load_config(args.config)
        cfg = validate_config(args.command, data, lines, args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if getattr(args, "threshold", None) is not None:
            cfg["threshold"] = args.threshold
        outdir = args.out or cfg["output"]["dir"]
        run = {"simulate": cmd_simulate, "certify": cmd_certify,
               "c1-search": cmd_c1_search}[args.command]
        return run(cfg, outdir)
    except ConfigError as e:
        for msg in e.errors:
            sys.stderr.write(msg + "\n")
        return EXIT_CONFIG


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
