"""Turn an analyzed function into an SPMD program.

Every 1D_B array is allocated at its local block size and read or written
block-wise; 1D_B parfors iterate only over the rank's block of the sample
index, with the array indices rebased to local positions. Reductions are
completed by allreduce. Replicated code runs redundantly on every rank.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

from . import ir
from .analysis import ONE_D, REP, TWO_D, DistEnv, _copies_and_dependents
from .ir import ArrayType, ScalarType
from .runtime.world import partition  # noqa: F401 - re-exported

__all__ = ["distribute", "partition", "SpmdProgram", "NotSupported", "InternalError"]


class NotSupported(Exception):
    """The program needs a feature the SPMD backend does not provide."""

    def __init__(self, message: str, span=ir.NO_SPAN):
        self.span = span
        super().__init__(message)


class InternalError(Exception):
    """The analysis result and the program disagree; a compiler bug."""


@dataclass
class SpmdProgram:
    function: ir.FunctionIR
    env: DistEnv
    blocks: dict = field(default_factory=dict)  # extent -> (start var, size var)
    allreduces: list = field(default_factory=list)  # (var, combine, line)
    coherence_vars: tuple = ()

    def source(self) -> str:
        from .runtime.codegen import generate
        return generate(self.function).source


def _extent_key(e) -> str | int:
    ext = ir.expr_extent(e)
    if ext is None:
        raise NotSupported("distributed loop bound must be an array extent")
    return ext


class _Distributor:
    def __init__(self, f: ir.FunctionIR, env: DistEnv, coherence: bool):
        self.f = f
        self.env = env
        self.sym = dict(f.symbols)
        self.coherence = coherence
        self.blocks = {}
        self.allreduces = []
        self.coherence_vars = ()

    # -- helpers
    def dist(self, name: str):
        return self.env.array_dist.get(name, REP)

    def is_dist(self, name: str) -> bool:
        return self.dist(name) == ONE_D

    def block(self, ext) -> tuple:
        got = self.blocks.get(ext)
        if got is None:
            got = (f"$start.{ext}", f"$size.{ext}")
            for n in got:
                self.sym[n] = ScalarType("i64")
            self.blocks[ext] = got
        return got

    def last_extent(self, name: str):
        return self.sym[name].dims[-1]

    def block_assigns(self, ext) -> list:
        start, size = self.block(ext)
        total = ir.extent_expr(ext)
        return [ir.Assign(start, ir.KnownCall("block_start", (total,))),
                ir.Assign(size, ir.KnownCall("block_size", (total,)))]

    # -- checks
    def check_supported(self):
        two_d = [n for n, d in self.env.array_dist.items() if d == TWO_D]
        two_d += [f"parfor#{p}" for p, d in self.env.parfor_dist.items() if d == TWO_D]
        if two_d:
            raise NotSupported(
                "2D block-cyclic distribution of " + ", ".join(sorted(two_d)) +
                " needs a ScaLAPACK-style 2D block-cyclic backend, which is out of scope "
                "for the SPMD simulator")

    def check_no_dist_access(self, stmts, where: str, exc=InternalError):
        for arr, _, _ in ir.array_accesses(stmts):
            if self.is_dist(arr):
                raise exc(f"element access to 1D_B array {arr} {where}")

    # -- rewriting
    def run(self) -> ir.FunctionIR:
        self.check_supported()
        needed = {self.last_extent(n) for n in self.sym
                  if isinstance(self.sym[n], ArrayType) and self.is_dist(n)}
        for p in ir.iter_parfors(self.f.body):
            if self.env.parfor_dist.get(p.id) == ONE_D:
                needed.add(_extent_key(p.loop_nests[-1].upper))
        body = self.stmts(self.f.body, top=True)
        # place block bounds right after each extent is defined
        out, placed = [], set()
        pending = sorted(needed, key=str)
        for ext in pending:
            if isinstance(ext, int) or ext in self.f.params:
                out.extend(self.block_assigns(ext))
                placed.add(ext)
        for s in body:
            out.append(s)
            if isinstance(s, ir.Assign) and s.lhs in needed and s.lhs not in placed:
                out.extend(self.block_assigns(s.lhs))
                placed.add(s.lhs)
        missing = [str(e) for e in pending if e not in placed]
        if missing:
            raise NotSupported("block extent(s) " + ", ".join(missing) +
                               " must be defined at the top level of the function")
        return ir.FunctionIR(self.f.name, self.f.params, tuple(out), self.sym, self.f.span)

    def stmts(self, body, top=False) -> list:
        out = []
        body = list(body)
        for k, s in enumerate(body):
            out.extend(self.stmt(s, body[:k], top))
        return out

    def local_dims(self, name: str, dims) -> tuple:
        _, size = self.block(self.last_extent(name))
        return tuple(dims[:-1]) + (ir.Var(size),)

    def stmt(self, s, before, top) -> list:
        if isinstance(s, ir.Alloc) and self.is_dist(s.array):
            return [ir.LocalAlloc(s.array, s.elem, self.local_dims(s.array, s.dims), s.span)]
        if isinstance(s, ir.DataSource) and self.is_dist(s.array):
            start, size = self.block(self.last_extent(s.array))
            return [ir.BlockRead(s.array, s.dataset, s.file, ir.Var(start), ir.Var(size), s.span)]
        if isinstance(s, ir.DataSink) and self.is_dist(s.array):
            ext = self.last_extent(s.array)
            start, size = self.block(ext)
            return [ir.BlockWrite(s.array, s.dataset, s.file, ir.Var(start), ir.Var(size),
                                  ir.extent_expr(ext), s.span)]
        if isinstance(s, ir.Assign):
            return self.assign(s)
        if isinstance(s, ir.Gemm):
            return self.gemm(s)
        if isinstance(s, ir.Parfor):
            return self.parfor(s, before)
        if isinstance(s, ir.ForLoop):
            body = self.stmts(s.body)
            if top and self.coherence:
                names = self.coherent_names(s)
                if names:
                    body.append(ir.CoherenceCheck(names, s.span))
            return [replace(s, body=tuple(body))]
        if isinstance(s, ir.ArrayWrite):
            self.check_no_dist_access([s], "outside a parfor")
        elif isinstance(s, ir.PartitionAnnotation):
            return [s]
        else:
            self.check_no_dist_access([s], "outside a parfor")
        return [s]

    def assign(self, s: ir.Assign) -> list:
        rhs = s.rhs
        if isinstance(rhs, ir.Comprehension):
            if s.lhs in self.sym and self.is_dist(s.lhs):
                raise NotSupported("distributed comprehensions must be lowered to parfors first",
                                   s.span)
            self.check_no_dist_access(rhs.body, "in a replicated comprehension")
            return [s]
        self.check_no_dist_access([s], "outside a parfor")
        lhs_dist = s.lhs is not None and isinstance(self.sym.get(s.lhs), ArrayType) \
            and self.is_dist(s.lhs)
        if isinstance(rhs, ir.KnownCall):
            name = rhs.name
            if lhs_dist and name in ("rand", "randn"):
                start, size = self.block(self.last_extent(s.lhs))
                args = (rhs.args[0], ir.Var(start)) + tuple(rhs.args[1:-1]) + (ir.Var(size),)
                return [replace(s, rhs=ir.KnownCall(name + "_block", args, rhs.span))]
            if lhs_dist and name in ("zeros", "ones"):
                _, size = self.block(self.last_extent(s.lhs))
                return [replace(s, rhs=replace(rhs, args=tuple(rhs.args[:-1]) + (ir.Var(size),)))]
            if lhs_dist and name == "reshape":
                src = rhs.args[0].name
                if not self.is_dist(src):
                    raise InternalError(f"reshape of replicated {src} into 1D_B {s.lhs}")
                old = [d for d in self.sym[src].dims[:-1] if d != 1]
                new = [d for d in self.sym[s.lhs].dims[:-1] if d != 1]
                if old != new:
                    raise NotSupported(f"reshape of {src} changes the non-partitioned extents",
                                       s.span)
                _, size = self.block(self.last_extent(s.lhs))
                args = (rhs.args[0],) + tuple(rhs.args[1:-1]) + (ir.Var(size),)
                return [replace(s, rhs=replace(rhs, args=args))]
            if name in ("sum", "prod", "min", "max") and len(rhs.args) == 1 \
                    and isinstance(rhs.args[0], ir.Var) and self.is_dist(rhs.args[0].name):
                self.allreduces.append((s.lhs, name, s.span.line))
                return [s, ir.Allreduce(s.lhs, name, s.span)]
            if lhs_dist and name not in ("reshape",):
                raise NotSupported(f"call {name} producing a 1D_B array", s.span)
        if isinstance(rhs, ir.UnknownCall):
            bad = [a.name for a in rhs.args if isinstance(a, ir.Var) and self.is_dist(a.name)]
            if bad:
                raise InternalError(f"1D_B array(s) {bad} passed to unknown call {rhs.name}")
        return [s]

    def gemm(self, g: ir.Gemm) -> list:
        d = tuple(self.dist(n) for n in (g.out, g.x, g.y))
        if ONE_D not in d:
            return [g]
        info = self.env.gemm_info.get(g.out)
        if d == (REP, ONE_D, ONE_D) and not g.x_transposed and g.y_transposed:
            self.allreduces.append((g.out, "sum", g.span.line))
            return [g, ir.Allreduce(g.out, "sum", g.span)]
        if d == (ONE_D, REP, ONE_D) and not g.y_transposed:
            return [g]
        branch = info.branch if info else "?"
        raise InternalError(f"matrix multiply {g.out} with distributions "
                            f"{[x.short for x in d]} (rule {branch}) has no SPMD form")

    def parfor(self, p: ir.Parfor, before) -> list:
        if self.env.parfor_dist.get(p.id, ONE_D) != ONE_D:
            self.check_no_dist_access(p.body, f"in replicated parfor #{p.id}", NotSupported)
            return [p]
        outer = p.loop_nests[-1]
        ext = _extent_key(outer.upper)
        if not (isinstance(outer.lower, ir.Const) and outer.lower.value == 1):
            raise NotSupported(f"parfor #{p.id}: distributed loops must start at 1", p.span)
        start, size = self.block(ext)
        copies, dependent = _copies_and_dependents(p.body, outer.var)
        sv = ir.Var(start)

        def rebase_index(arr, index):
            if not self.is_dist(arr):
                return index
            last = index[-1]
            if not (isinstance(last, ir.Var) and last.name in copies):
                raise InternalError(f"parfor #{p.id}: access to 1D_B array {arr} "
                                    "not indexed by the parfor index")
            return tuple(index[:-1]) + (ir.ScalarOp("-", (last, sv)),)

        def fix_expr(e):
            if isinstance(e, ir.ArrayRead):
                return replace(e, index=rebase_index(e.array, e.index))
            return e

        def fix(stmt):
            if isinstance(stmt, ir.ArrayWrite):
                stmt = replace(stmt, index=rebase_index(stmt.array, stmt.index))
                return ir.map_stmt_exprs(stmt, fix_expr)
            if isinstance(stmt, ir.ForLoop):
                stmt = replace(stmt, lower=ir.map_expr(stmt.lower, fix_expr),
                               upper=ir.map_expr(stmt.upper, fix_expr))
                return replace(stmt, body=tuple(fix(b) for b in stmt.body))
            if isinstance(stmt, ir.Parfor):
                raise NotSupported(f"parfor #{p.id}: nested parfor", stmt.span)
            return ir.map_stmt_exprs(stmt, fix_expr)

        body = tuple(fix(b) for b in p.body)
        nest = ir.LoopNest(outer.var, ir.ScalarOp("+", (sv, ir.Const(1))),
                           ir.ScalarOp("+", (sv, ir.Var(size))))
        out = [replace(p, loop_nests=tuple(p.loop_nests[:-1]) + (nest,), body=body)]
        for r in p.reductions:
            if isinstance(self.sym.get(r.var), ArrayType):
                self.check_fresh_accumulator(r, before, p)
            self.allreduces.append((r.var, r.combine, p.span.line))
            out.append(ir.Allreduce(r.var, r.combine, p.span))
        return out

    def check_fresh_accumulator(self, r: ir.Reduction, before, p: ir.Parfor):
        """Array reductions are combined by allreduce, so every rank must start
        from the identity: the array has to be freshly allocated (zeros) in the
        same block with no write in between, and the combine must be a sum."""
        if r.combine != "sum":
            raise NotSupported(f"parfor #{p.id}: array reduction {r.var} with {r.combine}", p.span)
        for s in reversed(before):
            if isinstance(s, (ir.Alloc, ir.LocalAlloc)) and s.array == r.var:
                return
            if r.var in ir.stmt_defs(s):
                break
        raise NotSupported(f"parfor #{p.id}: accumulator {r.var} is not freshly allocated", p.span)

    def coherent_names(self, loop: ir.ForLoop) -> tuple:
        names = []
        for s in loop.body:
            if isinstance(s, ir.Parfor):
                if self.env.parfor_dist.get(s.id, ONE_D) == ONE_D:
                    continue
                defs = {x.array for x in ir.walk([s]) if isinstance(x, ir.ArrayWrite)}
            elif isinstance(s, ir.Assign) and isinstance(s.rhs, ir.Comprehension):
                defs = {s.lhs}
            else:
                defs = ir.stmt_defs(s)
            for n in sorted(defs):
                t = self.sym.get(n)
                if n == loop.var or n in names or t is None:
                    continue
                if isinstance(t, ArrayType) and self.dist(n) != REP:
                    continue
                if isinstance(t, ScalarType) and t.kind == "str":
                    continue
                names.append(n)
        self.coherence_vars = tuple(names)
        return tuple(names)


def distribute(f: ir.FunctionIR, env: DistEnv, *, coherence: bool = True) -> SpmdProgram:
    d = _Distributor(f, env, coherence)
    g = d.run()
    return SpmdProgram(g, env, dict(d.blocks), list(d.allreduces), d.coherence_vars)
