"""Run compiled programs sequentially or as simulated SPMD ranks."""
from __future__ import annotations

import os
import threading

from .. import ir
from .arrays import DlgRuntimeError
from .checkpoint import CheckpointPolicy
from .codegen import CompiledProgram, generate
from .world import Context, World, WorldAborted

DEFAULT_SEED = 20170212


def default_seed() -> int:
    """``DLG_SEED`` from the environment, else the built-in default."""
    raw = os.environ.get("DLG_SEED")
    if raw is None or not raw.strip():
        return DEFAULT_SEED
    try:
        return int(raw, 0)
    except ValueError:
        raise ValueError(f"DLG_SEED must be an integer, got {raw!r}") from None


def _coerce(prog: CompiledProgram, inputs) -> list:
    if isinstance(inputs, dict):
        missing = [p for p in prog.params if p not in inputs]
        if missing:
            raise ValueError(f"missing input(s): {', '.join(missing)}")
        values = [inputs[p] for p in prog.params]
    else:
        values = list(inputs)
        if len(values) != len(prog.params):
            raise ValueError(f"{prog.name} takes {len(prog.params)} argument(s), got {len(values)}")
    out = []
    for name, kind, v in zip(prog.params, prog.param_kinds, values):
        try:
            if kind == "i64":
                if isinstance(v, float) and not v.is_integer():
                    raise ValueError
                out.append(int(v))
            elif kind == "f64":
                out.append(float(v))
            elif kind == "bool":
                out.append(bool(v))
            else:
                out.append(str(v))
        except (TypeError, ValueError):
            raise ValueError(f"argument {name}: cannot convert {v!r} to {kind}") from None
    return out


def _span_for(prog: CompiledProgram, tb):
    line = None
    while tb is not None:
        if tb.tb_frame.f_code.co_filename == prog.filename:
            line = tb.tb_lineno
        tb = tb.tb_next
    if line is None:
        return None
    for k in range(line, 0, -1):
        if k in prog.line_spans:
            return prog.line_spans[k]
    return None


def _invoke(prog: CompiledProgram, fn, ctx: Context, args):
    try:
        return fn(ctx, *args)
    except DlgRuntimeError as exc:
        if exc.span is None:
            span = _span_for(prog, exc.__traceback__)
            if span is not None:
                exc.span = span
                exc.args = (f"{span.line}:{span.col}: {exc.message}",)
        raise
    except (ArithmeticError, TypeError, ValueError, IndexError, KeyError) as exc:
        span = _span_for(prog, exc.__traceback__)
        raise DlgRuntimeError(f"{type(exc).__name__}: {exc}", span) from exc


def _program(f):
    """Accept a FunctionIR, an SpmdProgram (anything with ``.function``) or a
    CompiledProgram."""
    if isinstance(f, CompiledProgram):
        return f
    if not isinstance(f, ir.FunctionIR):
        f = f.function
    return generate(f)


def run_sequential(f, inputs=(), *, seed=None, io_root=None, externs=None,
                   policy: CheckpointPolicy | None = None, restart=False) -> tuple:
    """Run on a single context; the reference semantics for every pass."""
    prog = _program(f)
    args = _coerce(prog, inputs)
    ctx = Context(seed=default_seed() if seed is None else seed, io_root=io_root,
                  externs=externs, policy=policy, function=prog.name, restart=restart)
    return _invoke(prog, prog.load(), ctx, args)


def run_spmd(p, nranks: int, inputs=(), *, seed=None, io_root=None, externs=None,
             policy: CheckpointPolicy | None = None, restart=False, all_ranks=False):
    """Run ``nranks`` copies of the program; returns rank 0's results (or the
    list of every rank's results with ``all_ranks``)."""
    if nranks < 1:
        raise ValueError("nranks must be at least 1")
    prog = _program(p)
    args = _coerce(prog, inputs)
    fn = prog.load()
    seed = default_seed() if seed is None else seed
    world = World(nranks)
    results = [None] * nranks
    errors = [None] * nranks

    def worker(rank):
        ctx = Context(rank=rank, nranks=nranks, world=world, seed=seed, io_root=io_root,
                      externs=externs, policy=policy, function=prog.name, restart=restart)
        world.baton.acquire()
        try:
            results[rank] = _invoke(prog, fn, ctx, args)
        except BaseException as exc:  # noqa: BLE001 - reported after join
            errors[rank] = exc
            world.fail(exc)
        finally:
            world.finish(rank)
            world.baton.release()

    threads = [threading.Thread(target=worker, args=(r,), name=f"dlg-rank{r}", daemon=True)
               for r in range(nranks)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    real = [e for e in errors if e is not None and not isinstance(e, WorldAborted)]
    if real:
        raise real[0]
    if any(e is not None for e in errors):
        raise next(e for e in errors if e is not None)
    if world.error is not None:
        raise world.error
    return results if all_ranks else results[0]
