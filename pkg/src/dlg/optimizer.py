"""Parfor fusion and the two domain heuristics.

* ``gemm_to_loops`` turns matrix multiplies with a block-distributed input
  into parfors whose outermost loop walks the samples.
* ``interchange_rep_parfor`` splits a replicated parfor whose body makes full
  passes over distributed data, turning each pass into a distributed parfor
  that accumulates into an array indexed by the replicated loop variables.
* ``fuse_block`` merges adjacent compatible parfors and replaces arrays that
  only carry values from one statement of a fused body to another by scalars.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

from . import ir
from .analysis import ONE_D, REP, DistEnv
from .ir import ArrayType, ScalarType

_COMBINE_OPS = {"+": "sum", "*": "prod", "min": "min", "max": "max"}


class InterchangeUnsafe(Exception):
    pass


@dataclass
class FusionReport:
    parfors_before: int = 0
    parfors_after: int = 0
    fused_groups: list = field(default_factory=list)
    heuristics_fired: list = field(default_factory=list)  # (heuristic id, "line:col")
    skipped: list = field(default_factory=list)  # (heuristic id, reason)

    def to_json(self) -> str:
        return json.dumps({
            "parfors_before": self.parfors_before,
            "parfors_after": self.parfors_after,
            "fused_groups": self.fused_groups,
            "heuristics_fired": [list(h) for h in self.heuristics_fired],
            "skipped": [list(s) for s in self.skipped],
        }, indent=2)


class _Ctx:
    def __init__(self, f: ir.FunctionIR, env: DistEnv, report: FusionReport):
        self.f = f
        self.sym = dict(f.symbols)
        self.env = env
        self.report = report
        ids = [p.id for p in ir.iter_parfors(f.body)]
        self.next_id = max(ids, default=0) + 1
        self.counter = 0

    def new_id(self) -> int:
        pid = self.next_id
        self.next_id += 1
        return pid

    def fresh(self, base: str, typ) -> str:
        while True:
            self.counter += 1
            name = f"${base}{self.counter}"
            if name not in self.sym:
                self.sym[name] = typ
                return name

    def dist(self, pid):
        return self.env.parfor_dist.get(pid, ONE_D)


def count_parfors(body) -> int:
    return sum(1 for _ in ir.iter_parfors(body))


# -- Heuristic 1 --------------------------------------------------------------

def _op_read(name, transposed, a, b):
    """Element (a, b) of op(name)."""
    return ir.ArrayRead(name, (b, a) if transposed else (a, b))


def gemm_to_loops(g: ir.Gemm, ctx: _Ctx) -> list:
    """Loop-nest form of a matrix multiply whose inputs include a 1D_B array."""
    info = ctx.env.gemm_info.get(g.out)
    if info is None or info.branch not in (1, 2):
        return [g]
    (m, k), (_, n) = ir.gemm_shape(ctx.sym, g)
    out_t = ctx.sym[g.out]
    if info.branch == 2:
        # out[a, b] = sum_k op(x)[a, k] * y[k, b]; the sample loop b is outermost
        a = ctx.fresh("g", ScalarType("i64"))
        b = ctx.fresh("g", ScalarType("i64"))
        kk = ctx.fresh("g", ScalarType("i64"))
        acc = ctx.fresh("dot", ScalarType("f64"))
        va, vb, vk = ir.Var(a), ir.Var(b), ir.Var(kk)
        prod = ir.ScalarOp("*", (_op_read(g.x, g.x_transposed, va, vk), _op_read(g.y, False, vk, vb)))
        body = (
            ir.Assign(acc, ir.Const(0.0), g.span),
            ir.ForLoop(kk, ir.Const(1), ir.extent_expr(k),
                       (ir.Assign(acc, ir.ScalarOp("+", (ir.Var(acc), prod)), g.span),), g.span),
            ir.ArrayWrite(g.out, (va, vb), ir.Var(acc), g.span),
        )
        nests = (ir.LoopNest(a, ir.Const(1), ir.extent_expr(m)),
                 ir.LoopNest(b, ir.Const(1), ir.extent_expr(n)))
        pid = ctx.new_id()
        ctx.env.parfor_dist[pid] = ctx.env.array_dist.get(g.y, ONE_D)
        ctx.report.heuristics_fired.append(("H1", str(g.span)))
        return [ir.Alloc(g.out, out_t.elem, tuple(ir.extent_expr(d) for d in out_t.dims), g.span),
                ir.Parfor(pid, nests, (), body, g.span)]
    # branch 1: out[a, d] = sum_s x[a, s] * y[d, s]; reduce across the samples s
    a = ctx.fresh("g", ScalarType("i64"))
    s = ctx.fresh("g", ScalarType("i64"))
    d = ctx.fresh("g", ScalarType("i64"))
    va, vs, vd = ir.Var(a), ir.Var(s), ir.Var(d)
    upd = ir.ScalarOp("+", (ir.ArrayRead(g.out, (va, vd)),
                            ir.ScalarOp("*", (ir.ArrayRead(g.x, (va, vs)), ir.ArrayRead(g.y, (vd, vs))))))
    body = (ir.ForLoop(d, ir.Const(1), ir.extent_expr(n),
                       (ir.ArrayWrite(g.out, (va, vd), upd, g.span),), g.span),)
    nests = (ir.LoopNest(a, ir.Const(1), ir.extent_expr(m)),
             ir.LoopNest(s, ir.Const(1), ir.extent_expr(k)))
    pid = ctx.new_id()
    ctx.env.parfor_dist[pid] = ONE_D
    ctx.report.heuristics_fired.append(("H1", str(g.span)))
    return [ir.Alloc(g.out, out_t.elem, tuple(ir.extent_expr(x) for x in out_t.dims), g.span),
            ir.Parfor(pid, nests, (ir.Reduction(g.out, 0.0, "sum"),), body, g.span)]


# -- Heuristic 2 ----------------------------------------------------------------

def _distributed_traversal(loop: ir.ForLoop, env: DistEnv) -> bool:
    """True if ``loop`` walks the partitioned dimension of a 1D_B array."""
    for arr, index, _ in ir.array_accesses(loop.body):
        if env.array_dist.get(arr) == ONE_D and isinstance(index[-1], ir.Var) \
                and index[-1].name == loop.var:
            return True
    return False


def _reduction_update(stmt, acc: str):
    """Combine name if ``stmt`` is ``acc = acc OP e`` or
    ``acc = select(g, acc OP e, acc)``; otherwise None."""
    if not (isinstance(stmt, ir.Assign) and stmt.lhs == acc):
        return None
    e = stmt.rhs
    if isinstance(e, ir.ScalarOp) and e.op == "select" and e.args[2] == ir.Var(acc):
        e = e.args[1]
    if isinstance(e, ir.ScalarOp) and e.op in _COMBINE_OPS and e.args[0] == ir.Var(acc) \
            and acc not in ir.free_vars(e.args[1]):
        return _COMBINE_OPS[e.op]
    return None


def _find_groups(p: ir.Parfor, env: DistEnv):
    """Indices (i, i+1) of (acc = init; serial pass over 1D_B data) pairs."""
    groups = []
    body = p.body
    for i in range(len(body) - 1):
        init, loop = body[i], body[i + 1]
        if isinstance(init, ir.Assign) and isinstance(init.rhs, ir.Const) \
                and isinstance(loop, ir.ForLoop) and _distributed_traversal(loop, env):
            groups.append(i)
    return groups


def interchange_rep_parfor(p: ir.Parfor, ctx: _Ctx) -> list:
    """Fission a replicated parfor and interchange its passes over 1D_B data."""
    env = ctx.env
    if ctx.dist(p.id) != REP or p.reductions:
        return [p]
    groups = _find_groups(p, env)
    if not groups:
        return [p]
    nest_vars = {n.var for n in p.loop_nests}
    local_scalars = {s.lhs for s in p.body if isinstance(s, ir.Assign) and s.lhs}
    rep_dims = tuple(ir.expr_extent(n.upper) for n in p.loop_nests)
    if any(d is None for d in rep_dims) or any(n.lower != ir.Const(1) for n in p.loop_nests):
        raise InterchangeUnsafe(f"parfor #{p.id}: loop bounds are not simple extents")
    passes = {gi + 1 for gi in groups}
    plans = []
    for gi in groups:
        init, loop = p.body[gi], p.body[gi + 1]
        acc = init.lhs
        if len(loop.body) != 1:
            raise InterchangeUnsafe(f"parfor #{p.id}: pass over data has more than one statement")
        combine = _reduction_update(loop.body[0], acc)
        if combine is None:
            raise InterchangeUnsafe(f"parfor #{p.id}: pass over data is not a reduction into {acc}")
        if init.rhs.value != ir.REDUCTION_COMBINES[combine]:
            raise InterchangeUnsafe(f"parfor #{p.id}: {acc} starts from a non-identity value")
        carried = (ir.free_vars(loop.body[0].rhs) - {acc, loop.var}) & (local_scalars - nest_vars)
        if carried:
            raise InterchangeUnsafe(
                f"parfor #{p.id}: pass over data reads per-iteration scalar(s) {sorted(carried)}")
        plans.append((gi, init, loop, acc, combine))
    for i, s in enumerate(p.body):
        if i in passes:
            continue
        for arr, _, is_write in ir.array_accesses([s]):
            if is_write and env.array_dist.get(arr) == ONE_D:
                raise InterchangeUnsafe(f"parfor #{p.id}: writes distributed array {arr}")

    out = []
    replaced = {}
    rep_index = tuple(ir.Var(n.var) for n in p.loop_nests)
    for gi, init, loop, acc, combine in plans:
        acc_arr = ctx.fresh("accs", ArrayType("f64", rep_dims))
        sample = ctx.fresh("s", ScalarType("i64"))
        # fresh copies of the replicated loop variables keep the new parfors'
        # bodies disjoint so that they can fuse with each other
        local = {n.var: ctx.fresh("r", ScalarType("i64")) for n in p.loop_nests}
        local_index = tuple(ir.Var(local[n.var]) for n in p.loop_nests)
        cell = ir.ArrayRead(acc_arr, local_index)

        def sub(e, acc=acc, cell=cell, loopvar=loop.var, sample=sample, local=local):
            if e == ir.Var(acc):
                return cell
            if isinstance(e, ir.Var) and e.name == loopvar:
                return ir.Var(sample)
            if isinstance(e, ir.Var) and e.name in local:
                return ir.Var(local[e.name])
            return e
        inner = (ir.ArrayWrite(acc_arr, local_index, ir.map_expr(loop.body[0].rhs, sub), loop.span),)
        for n in p.loop_nests:  # the first nest ends up innermost
            inner = (ir.ForLoop(local[n.var], n.lower, n.upper, inner, p.span),)
        pid = ctx.new_id()
        env.parfor_dist[pid] = ONE_D
        env.array_dist[acc_arr] = REP
        out.append(ir.Alloc(acc_arr, "f64", tuple(ir.extent_expr(d) for d in rep_dims), p.span))
        out.append(ir.Parfor(pid, (ir.LoopNest(sample, loop.lower, loop.upper),),
                             (ir.Reduction(acc_arr, init.rhs.value, combine),), inner, loop.span))
        ctx.report.heuristics_fired.append(("H2", str(loop.span)))
        replaced[gi] = ir.Assign(acc, ir.ArrayRead(acc_arr, rep_index), init.span)
    rest = tuple(replaced.get(i, s) for i, s in enumerate(p.body) if i not in passes)
    out.append(ir.Parfor(p.id, p.loop_nests, (), rest, p.span))
    return out


# -- fusion ----------------------------------------------------------------------

def _nests_equal(a: ir.Parfor, b: ir.Parfor) -> bool:
    if len(a.loop_nests) != len(b.loop_nests):
        return False
    return all(x.lower == y.lower and x.upper == y.upper for x, y in zip(a.loop_nests, b.loop_nests))


def _assigned_scalars(p: ir.Parfor) -> set:
    out = set()
    for s in ir.walk(p.body):
        if isinstance(s, ir.Assign) and s.lhs:
            out.add(s.lhs)
        elif isinstance(s, ir.ForLoop):
            out.add(s.var)
    return out


def _read_names(p: ir.Parfor) -> set:
    out = set()
    for s in ir.walk(p.body):
        for e in ir.stmt_exprs(s):
            out |= ir.free_vars(e)
    return out


def can_fuse(a: ir.Parfor, b: ir.Parfor, ctx: _Ctx) -> bool:
    if not _nests_equal(a, b) or ctx.dist(a.id) != ctx.dist(b.id):
        return False
    mapping = {y.var: x.var for x, y in zip(a.loop_nests, b.loop_nests)}
    b = ir.rename_stmt(b, mapping)
    nest = [ir.Var(n.var) for n in a.loop_nests]
    L = len(nest)
    acc_a = {(arr, idx, w) for arr, idx, w in ir.array_accesses(a.body)}
    acc_b = {(arr, idx, w) for arr, idx, w in ir.array_accesses(b.body)}
    red_a = {r.var for r in a.reductions}
    red_b = {r.var for r in b.reductions}
    touched_a = {x[0] for x in acc_a}
    touched_b = {x[0] for x in acc_b}
    reads_a, reads_b = _read_names(a), _read_names(b)
    if red_a & (touched_b | reads_b) or red_b & (touched_a | reads_a):
        return False
    for arr in touched_a & touched_b:
        written = any(w for x, _, w in acc_a | acc_b if x == arr)
        if not written:
            continue
        for x, idx, _ in acc_a | acc_b:
            if x == arr and (len(idx) < L or list(idx[-L:]) != nest):
                return False
    sa, sb = _assigned_scalars(a), _assigned_scalars(b)
    if sa & sb or sa & reads_b or sb & reads_a:
        return False
    return True


def fuse_two(a: ir.Parfor, b: ir.Parfor) -> ir.Parfor:
    mapping = {y.var: x.var for x, y in zip(a.loop_nests, b.loop_nests)}
    b = ir.rename_stmt(b, mapping)
    return ir.Parfor(a.id, a.loop_nests, a.reductions + b.reductions, a.body + b.body, a.span)


def _names_in(s) -> set:
    return ir.stmt_uses(s) | ir.stmt_defs(s)


def fuse_block(stmts, ctx: _Ctx) -> tuple:
    """Fuse adjacent compatible parfors in ``stmts``; recurse into serial loops
    without fusing across their boundaries."""
    out = []
    cur = None  # open candidate parfor
    held = []  # allocations seen after the candidate
    group = []
    for s in stmts:
        if isinstance(s, ir.ForLoop):
            s = replace(s, body=fuse_block(s.body, ctx))
        if cur is not None and isinstance(s, ir.Alloc) and s.array not in _names_in(cur):
            held.append(s)
            continue
        if cur is not None and isinstance(s, ir.Parfor) and can_fuse(cur, s, ctx):
            cur = fuse_two(cur, s)
            group.append(s.id)
            out.extend(held)
            held = []
            continue
        if cur is not None:
            _flush(out, cur, group, ctx)
            out.extend(held)
            cur, held, group = None, [], []
        if isinstance(s, ir.Parfor):
            cur, group = s, [s.id]
        else:
            out.append(s)
    if cur is not None:
        _flush(out, cur, group, ctx)
        out.extend(held)
    return tuple(out)


def _flush(out, cur, group, ctx):
    if len(group) > 1:
        ctx.report.fused_groups.append(list(group))
        for pid in group[1:]:
            ctx.env.parfor_dist.pop(pid, None)
    out.append(cur)


# -- intermediate array elimination ------------------------------------------------------

def _local_names(s) -> set:
    """Names ``s`` itself mentions, not counting nested bodies."""
    out = set()
    for e in ir.stmt_exprs(s):
        out |= ir.free_vars(e)
    for attr in ("array", "lhs", "out", "x", "y", "var", "index_var"):
        v = getattr(s, attr, None)
        if isinstance(v, str):
            out.add(v)
    for attr in ("vars",):
        out.update(getattr(s, attr, ()))
    if isinstance(s, ir.Parfor):
        out.update(r.var for r in s.reductions)
    return out


def _ref_counts(body, skip_allocs=True) -> dict:
    counts = {}
    for s in ir.walk(body):
        if skip_allocs and isinstance(s, ir.Alloc):
            continue
        for n in _local_names(s):
            counts[n] = counts.get(n, 0) + 1
    return counts


def scalarize(f_body, ctx: _Ctx) -> tuple:
    """Replace arrays that live entirely inside one parfor iteration by scalars."""
    total = _ref_counts(f_body)
    victims = set()
    for p in ir.iter_parfors(f_body):
        nest = tuple(ir.Var(n.var) for n in p.loop_nests)
        reds = {r.var for r in p.reductions}
        inside = _ref_counts(p.body)
        for arr, _, w in ir.array_accesses(p.body):
            if w and arr not in reds and arr not in victims and total.get(arr) == inside.get(arr) \
                    and _only_full_index(p, arr, nest):
                victims.add(arr)
    if not victims:
        return tuple(f_body)
    for arr in victims:
        t = ctx.sym.pop(arr)
        ctx.sym[arr + ".s"] = ScalarType(t.elem)
        ctx.env.array_dist.pop(arr, None)

    def fix_expr(e):
        if isinstance(e, ir.ArrayRead) and e.array in victims:
            return ir.Var(e.array + ".s", e.span)
        return e

    def fix(body):
        res = []
        for s in body:
            if isinstance(s, ir.Alloc) and s.array in victims:
                continue
            if isinstance(s, ir.ArrayWrite) and s.array in victims:
                s = ir.Assign(s.array + ".s", ir.map_expr(s.value, fix_expr), s.span)
            else:
                s = ir.map_stmt_exprs(s, fix_expr)
                if isinstance(s, (ir.ForLoop, ir.Parfor)):
                    s = replace(s, body=fix(s.body))
            res.append(s)
        return tuple(res)
    return fix(f_body)


def _only_full_index(p: ir.Parfor, arr: str, nest: tuple) -> bool:
    writes = [i for i, s in enumerate(p.body) if isinstance(s, ir.ArrayWrite) and s.array == arr]
    if len(writes) != 1:
        return False
    w = writes[0]
    for i, s in enumerate(p.body):
        for a, idx, is_write in ir.array_accesses([s]):
            if a != arr:
                continue
            if tuple(idx) != nest:
                return False
            if is_write and not (i == w and isinstance(s, ir.ArrayWrite)):
                return False
            if not is_write and i <= w:
                return False
    return True


# -- driver -------------------------------------------------------------------------

def _map_block(stmts, fn):
    out = []
    for s in stmts:
        if isinstance(s, ir.ForLoop):
            s = replace(s, body=_map_block(s.body, fn))
        out.extend(fn(s))
    return tuple(out)


def optimize(f: ir.FunctionIR, env: DistEnv) -> tuple:
    """Heuristic 1 on every GEMM, Heuristic 2 on every replicated parfor, then
    fusion and intermediate-array elimination. Returns (f', env', report).

    ``env'`` carries distributions for the parfors the heuristics created; the
    caller re-runs the analysis seeded with it."""
    env = env.copy()
    report = FusionReport(parfors_before=count_parfors(f.body))
    ctx = _Ctx(f, env, report)
    body = _map_block(f.body, lambda s: gemm_to_loops(s, ctx) if isinstance(s, ir.Gemm) else [s])

    def h2(s):
        if not isinstance(s, ir.Parfor):
            return [s]
        try:
            return interchange_rep_parfor(s, ctx)
        except InterchangeUnsafe as exc:
            report.skipped.append(("H2", str(exc)))
            return [s]
    body = _map_block(body, h2)
    body = fuse_block(body, ctx)
    body = scalarize(body, ctx)
    report.parfors_after = count_parfors(body)
    return f.with_body(body, ctx.sym), env, report
