"""Checkpoint insertion for the outer iterative loop.

The saved set is every variable that is live on entry to the loop body and
written inside it, plus the loop index. At the top of each iteration ``i`` the
program hands the state after iteration ``i - 1`` to the runtime, which decides
(by the Young interval) whether to write it. The restart version restores the
newest checkpoint before the loop and resumes at the following iteration.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

from . import ir
from .analysis import ONE_D, DistEnv
from .ir import ArrayType


class CheckpointError(Exception):
    pass


@dataclass(frozen=True)
class CheckpointPlan:
    loop_index: int  # position of the loop in the function body
    index_var: str
    saved: tuple  # saved variables other than the index, in first-use order

    @property
    def saved_set(self) -> set:
        return set(self.saved) | {self.index_var}


def _exposed_uses(body, defined: set, out: list, sym: dict) -> set:
    """Append names read before any definition in ``body`` to ``out``
    (first-use order); returns the definitions made by ``body``."""
    defined = set(defined)
    for s in body:
        if isinstance(s, ir.ForLoop):
            for e in (s.lower, s.upper):
                _note(ir.free_vars(e), defined, out)
            inner = _exposed_uses(s.body, defined | {s.var}, out, sym)
            defined |= inner
            continue
        if isinstance(s, ir.Parfor):
            for n in s.loop_nests:
                _note(ir.free_vars(n.lower) | ir.free_vars(n.upper), defined, out)
            arrays = {r.var for r in s.reductions if isinstance(sym.get(r.var), ArrayType)}
            # scalar reduction variables are initialized by the parfor itself
            _note(arrays, defined, out)
            local = {n.var for n in s.loop_nests} | {r.var for r in s.reductions}
            inner = _exposed_uses(s.body, defined | local, out, sym)
            defined |= inner | local
            continue
        if isinstance(s, ir.Assign) and isinstance(s.rhs, ir.Comprehension):
            local = {n.var for n in s.rhs.nests}
            for n in s.rhs.nests:
                _note(ir.free_vars(n.lower) | ir.free_vars(n.upper), defined, out)
            _exposed_uses(s.rhs.body, defined | local | {s.lhs}, out, sym)
            defined.add(s.lhs)
            continue
        uses = ir.stmt_uses(s)
        if isinstance(s, ir.ArrayWrite):
            uses = uses | {s.array}
        _note(uses, defined, out)
        defined |= ir.stmt_defs(s)
    return defined


def _note(names, defined, out):
    for n in sorted(names):
        if n not in defined and n not in out:
            out.append(n)


def plan_checkpoint(f: ir.FunctionIR, env: DistEnv | None = None) -> CheckpointPlan:
    loops = [k for k, s in enumerate(f.body) if isinstance(s, ir.ForLoop)]
    if not loops:
        raise CheckpointError(f"{f.name}: no outer loop to checkpoint")
    if len(loops) > 1:
        raise CheckpointError(f"{f.name}: {len(loops)} outer loops; exactly one is supported")
    k = loops[0]
    loop = f.body[k]
    exposed = []
    _exposed_uses(loop.body, {loop.var}, exposed, f.symbols)
    written = set()
    for s in loop.body:
        written |= ir.stmt_defs(s)
    steering = sorted((ir.free_vars(loop.lower) | ir.free_vars(loop.upper)) & written)
    if steering:
        raise CheckpointError(f"{f.name}: loop trip count depends on loop-carried state "
                              f"{', '.join(steering)}; convergence loops are not checkpointable")
    saved = tuple(n for n in exposed if n in written and n != loop.var and n in f.symbols)
    if env is not None:
        bad = [n for n in saved if isinstance(f.symbols[n], ArrayType)
               and env.array_dist.get(n) == ONE_D]
        if bad:
            raise CheckpointError(f"{f.name}: loop-carried state {', '.join(bad)} is distributed "
                                  "(1D_B); only replicated state can be checkpointed")
    return CheckpointPlan(k, loop.var, saved)


def insert_checkpointing(f: ir.FunctionIR, plan: CheckpointPlan) -> ir.FunctionIR:
    """Add the per-iteration checkpoint call and cleanup after the loop."""
    loop = f.body[plan.loop_index]
    ck = ir.Checkpoint(plan.index_var, plan.saved, loop.span)
    new_loop = replace(loop, body=(ck,) + tuple(loop.body))
    body = list(f.body)
    body[plan.loop_index:plan.loop_index + 1] = [new_loop, ir.CheckpointCleanup(loop.span)]
    return f.with_body(body)


def make_restart_version(f: ir.FunctionIR, plan: CheckpointPlan) -> ir.FunctionIR:
    """Restore saved state before the loop and resume after the saved iteration.

    Expects ``f`` to be the output of ``insert_checkpointing``."""
    loop = f.body[plan.loop_index]
    if not isinstance(loop, ir.ForLoop) or loop.var != plan.index_var:
        raise CheckpointError("restart version needs the checkpointed loop at its planned position")
    start = f"$resume.{plan.index_var}"
    sym = dict(f.symbols)
    sym[start] = ir.ScalarType("i64")
    restore = ir.Restore(plan.index_var, plan.saved, start, loop.lower, loop.span)
    body = list(f.body)
    body[plan.loop_index:plan.loop_index + 1] = [restore, replace(loop, lower=ir.Var(start))]
    return f.with_body(body, sym)
