"""Command-line driver.

Exit codes: 0 success, 1 user error (bad program, bad input, runtime
failure), 2 internal compiler error.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys

from . import analysis, datagen, irtext, pipeline
from .checkpointing import CheckpointError
from .distributed import InternalError, NotSupported
from .frontend.lower import DlgTypeError
from .frontend.parser import DlgSyntaxError
from .runtime.arrays import Array, DlgRuntimeError
from .runtime.checkpoint import CheckpointPolicy
from .runtime.execute import default_seed, run_sequential, run_spmd

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2


class UserError(Exception):
    pass


class UnknownVariable(UserError):
    pass


# -- output helpers -------------------------------------------------------------------

def _json_float(x):
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    return x


def _value_json(name, v) -> dict:
    if isinstance(v, Array):
        return {"name": name, "dims": list(v.dims), "value": [_json_float(x) for x in v.data]}
    return {"name": name, "dims": None, "value": _json_float(v)}


def _value_text(name, v) -> str:
    if isinstance(v, Array):
        if len(v.dims) == 1 or v.dims[0] == 1:
            body = "[" + ", ".join(repr(x) for x in v.data) + "]"
        else:
            body = "[" + "; ".join(" ".join(repr(x) for x in row) for row in v.tolist()) + "]"
        return f"{name} = {body}"
    return f"{name} = {v!r}"


def dist_rows(env) -> list:
    return [{"name": n, "distribution": d.short, "cause": c} for n, d, c in env.table()]


def dist_table_text(env) -> str:
    rows = env.table()
    if not rows:
        return ""
    width = max(len(n) for n, _, _ in rows)
    lines = []
    for n, d, c in rows:
        line = f"{n:<{width}}  {d.short:<5}"
        if c:
            line += f"  (cause: {c})"
        lines.append(line.rstrip())
    return "\n".join(lines) + "\n"


class _Output:
    def __init__(self, path):
        self.path = path
        self.chunks = []

    def write(self, text: str):
        self.chunks.append(text if text.endswith("\n") or not text else text + "\n")

    def json(self, obj):
        self.write(json.dumps(obj, indent=2, allow_nan=False))

    def flush(self):
        text = "".join(self.chunks)
        if self.path:
            with open(self.path, "w", encoding="utf-8") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)


# -- commands ---------------------------------------------------------------------------

def _compile(args):
    if not os.path.exists(args.path):
        raise UserError(f"file not found: {args.path}")
    return pipeline.compile_file(args.path)


def cmd_analyze(args, out: _Output) -> int:
    c = _compile(args)
    if args.format == "json":
        out.json({"command": "analyze", "function": c.optimizer.name, "sweeps": c.env.sweeps,
                  "distributions": dist_rows(c.env)})
    else:
        out.write(dist_table_text(c.env))
    return EXIT_OK


def cmd_explain(args, out: _Output) -> int:
    c = _compile(args)
    try:
        lines = analysis.explain(c.env, args.var)
    except KeyError:
        raise UnknownVariable(f"unknown variable {args.var!r}; known: "
                              + ", ".join(sorted(c.env.array_dist))) from None
    if args.var.startswith("parfor#"):
        dist = c.env.parfor_dist[int(args.var[len("parfor#"):])]
    else:
        dist = c.env.array_dist[args.var]
    if args.format == "json":
        out.json({"command": "explain", "variable": args.var, "distribution": dist.short,
                  "lines": lines})
    else:
        out.write("\n".join(lines))
    return EXIT_OK


def _dumps(c, args, out: _Output, payload: dict):
    if args.dump_after:
        text = irtext.format_function(c.stage(args.dump_after))
        payload["dump"] = {"stage": args.dump_after, "ir": text}
        if args.format == "text":
            out.write(text)
    if args.dump_dist:
        payload["distributions"] = dist_rows(c.env)
        if args.format == "text":
            out.write(dist_table_text(c.env))
    if args.fusion_report:
        payload["fusion_report"] = json.loads(c.fusion.to_json())
        if args.format == "text":
            out.write(c.fusion.to_json())
    if getattr(args, "emit_spmd_source", False):
        if c.spmd is None:
            raise NotSupported(c.spmd_error or "no SPMD program")
        src = c.spmd.source()
        payload["spmd_source"] = src
        if args.format == "text":
            out.write(src)


def cmd_compile(args, out: _Output) -> int:
    c = _compile(args)
    payload = {"command": "compile", "function": c.optimizer.name,
               "parfors": c.fusion.parfors_after,
               "checkpoint": sorted(c.checkpoint_plan.saved_set) if c.checkpoint_plan else None,
               "spmd": c.spmd is not None,
               "notes": [x for x in (c.checkpoint_error, c.spmd_error) if x]}
    _dumps(c, args, out, payload)
    if args.format == "json":
        out.json(payload)
    elif not (args.dump_after or args.dump_dist or args.fusion_report or args.emit_spmd_source):
        out.write(f"{c.optimizer.name}: {c.fusion.parfors_after} parfor(s) after optimization")
        for note in payload["notes"]:
            out.write(f"note: {note}")
    return EXIT_OK


def _policy(args):
    if not args.checkpoint_dir:
        if args.fail_at_iteration is not None:
            return CheckpointPolicy(None, fail_at_iteration=args.fail_at_iteration)
        return None
    return CheckpointPolicy(args.checkpoint_dir, mtbf=args.mtbf, cost_estimate=args.ckpt_cost_estimate,
                            interval=args.checkpoint_interval,
                            fail_at_iteration=args.fail_at_iteration)


def _execute(args, out: _Output, restart: bool) -> int:
    if args.nranks < 1:
        raise UserError("--nranks must be at least 1")
    c = _compile(args)
    seed = default_seed() if args.seed is None else args.seed
    policy = _policy(args)
    if restart and not args.checkpoint_dir:
        raise UserError("restart needs --checkpoint-dir")
    if (policy is not None or restart) and c.checkpoint is None:
        raise CheckpointError(c.checkpoint_error or "program cannot be checkpointed")
    kw = dict(seed=seed, io_root=None, externs=_externs(args), policy=policy, restart=restart)
    if args.sequential:
        f = c.restart if restart else (c.checkpoint if policy is not None else c.optimizer)
        results = run_sequential(f, args.args, **kw)
    else:
        prog = c.spmd_restart if restart else c.spmd
        if prog is None:
            raise NotSupported(c.spmd_error or "no SPMD program")
        results = run_spmd(prog, args.nranks, args.args, **kw)
    names = c.optimizer.return_stmt.vars
    payload = {"command": "restart" if restart else "run", "function": c.optimizer.name,
               "nranks": 1 if args.sequential else args.nranks, "seed": seed,
               "outputs": [_value_json(n, v) for n, v in zip(names, results)],
               "checkpoints": list(policy.written) if policy is not None else []}
    _dumps(c, args, out, payload)
    if args.format == "json":
        out.json(payload)
    else:
        for n, v in zip(names, results):
            out.write(_value_text(n, v))
    return EXIT_OK


def _externs(args) -> dict:
    """Externs available to programs run from the command line: each returns
    the sum of its numeric arguments (arrays contribute their element sum)."""
    def total(*xs):
        acc = 0.0
        for x in xs:
            acc += sum(x.data) if isinstance(x, Array) else float(x)
        return acc
    return _ExternTable(total)


class _ExternTable(dict):
    def __init__(self, default):
        super().__init__()
        self.default = default

    def get(self, key, fallback=None):
        return super().get(key, self.default)


def cmd_run(args, out):
    return _execute(args, out, restart=False)


def cmd_restart(args, out):
    return _execute(args, out, restart=True)


def cmd_gen_data(args, out: _Output) -> int:
    seed = default_seed() if args.seed is None else args.seed
    files = datagen.generate(args.kind, args.file, args.n, args.d, k=args.k, seed=seed,
                             dataset=args.dataset)
    if args.format == "json":
        out.json({"command": "gen-data", "kind": args.kind, "seed": seed, "files": files})
    else:
        out.write("\n".join(files))
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------------------

def _common(p, dumps=True):
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--out", help="write output to this file instead of stdout")
    if dumps:
        p.add_argument("--dump-after", choices=pipeline.STAGES,
                       help="print the IR after this stage")
        p.add_argument("--dump-dist", action="store_true", help="print the distribution table")
        p.add_argument("--fusion-report", action="store_true", help="print the fusion report")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dlg", description="Auto-parallelizing compiler for a small "
                                 "array language, with an SPMD simulator.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="print the distribution of every array and parfor")
    p.add_argument("path")
    _common(p, dumps=False)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("explain", help="explain why a variable is replicated")
    p.add_argument("path")
    p.add_argument("var")
    _common(p, dumps=False)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("compile", help="compile and optionally dump stages")
    p.add_argument("path")
    _common(p)
    p.add_argument("--emit-spmd-source", action="store_true",
                   help="print the per-rank Python source")
    p.set_defaults(func=cmd_compile)

    for name, func in (("run", cmd_run), ("restart", cmd_restart)):
        p = sub.add_parser(name, help=f"{name} a program on simulated ranks")
        p.add_argument("path")
        p.add_argument("args", nargs="*", help="program arguments in declaration order")
        _common(p)
        p.add_argument("--emit-spmd-source", action="store_true")
        p.add_argument("--nranks", type=int, default=1)
        p.add_argument("--sequential", action="store_true",
                       help="use the sequential reference executor")
        p.add_argument("--seed", type=int, default=None, help="random seed (default: $DLG_SEED)")
        p.add_argument("--checkpoint-dir")
        p.add_argument("--mtbf", type=float, default=3600.0, help="mean time between failures (s)")
        p.add_argument("--ckpt-cost-estimate", type=float, default=1.0,
                       help="initial checkpoint cost estimate (s)")
        p.add_argument("--checkpoint-interval", type=float, default=None,
                       help="fixed checkpoint interval (s), overriding the Young interval")
        p.add_argument("--fail-at-iteration", type=int, default=None,
                       help="inject a failure at the start of this iteration")
        p.set_defaults(func=func)

    p = sub.add_parser("gen-data", help="write a synthetic dataset")
    p.add_argument("kind", choices=datagen.GENERATORS)
    p.add_argument("file", help="dataset file prefix (or directory)")
    p.add_argument("--n", type=int, required=True, help="number of samples")
    p.add_argument("--d", type=int, default=0, help="features per sample (0: vector)")
    p.add_argument("--k", type=int, default=3, help="number of blobs")
    p.add_argument("--dataset", default="points", help="dataset name for gaussian data")
    p.add_argument("--seed", type=int, default=None)
    _common(p, dumps=False)
    p.set_defaults(func=cmd_gen_data)
    return ap


_USER_ERRORS = (UserError, DlgSyntaxError, DlgTypeError, DlgRuntimeError, NotSupported,
                CheckpointError, OSError, ValueError)


def _diagnostic(exc, path) -> str:
    span = getattr(exc, "span", None)
    text = str(exc)
    if isinstance(exc, (DlgSyntaxError, DlgTypeError)):
        return text
    if isinstance(exc, DlgRuntimeError) and span is not None and span.line:
        return f"{path}:{span.line}:{span.col}: {exc.message}"
    if isinstance(exc, NotSupported) and span is not None and span.line:
        return f"{path}:{span.line}:{span.col}: {text}"
    return f"{path}: {text}" if path else text


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = _Output(getattr(args, "out", None))
    path = getattr(args, "path", None)
    try:
        code = args.func(args, out)
    except _USER_ERRORS as exc:
        print(f"error: {_diagnostic(exc, path)}", file=sys.stderr)
        return EXIT_USER
    except (InternalError, AssertionError, analysis.NonConvergence) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - any other failure is a compiler bug
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    out.flush()
    return code


if __name__ == "__main__":
    sys.exit(main())
