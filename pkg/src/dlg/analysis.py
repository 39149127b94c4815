"""Distribution inference: a fixed-point data-flow analysis over the lattice
REP <= 2D_BC <= 1D_B.

Every array and parfor starts at 1D_B. Transfer functions only ever lower
values (they are pointwise non-increasing), so repeated sweeps over the
function reach the greatest fixed point below the initial assignment, which is
the least restrictive distribution consistent with every rule.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

from . import ir
from .ir import Distribution, meet

REP = Distribution.REPLICATED
TWO_D = Distribution.TWO_D_BLOCK_CYCLIC
ONE_D = Distribution.ONE_D_BLOCK

CAUSE_RETURN = "returned from entry function"
CAUSE_GEMM_REDUCTION = "gemm reduction across samples"
CAUSE_GEMM_DOT = "dot product with sample features"
CAUSE_GEMM_NONE = "matrix multiply with no parallel rule"


class NonConvergence(Exception):
    pass


@dataclass(frozen=True)
class Provenance:
    var: str
    forced_to: Distribution
    cause: str
    span: ir.Span = ir.NO_SPAN
    source: str | None = None  # variable the constraint came from, if any


@dataclass
class GemmInfo:
    out: str
    x: str
    y: str
    dists: tuple = ()
    branch: int = 4
    needs_allreduce: bool = False


@dataclass
class DistEnv:
    array_dist: dict = field(default_factory=dict)
    parfor_dist: dict = field(default_factory=dict)
    gemm_info: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)  # var -> first Provenance to REP
    history: list = field(default_factory=list)  # debug-mode snapshots
    sweeps: int = 0
    changed: bool = False

    def copy(self) -> "DistEnv":
        return DistEnv(dict(self.array_dist), dict(self.parfor_dist),
                       copy.deepcopy(self.gemm_info), dict(self.provenance), [], self.sweeps)

    def key(self):
        return (tuple(sorted(self.array_dist.items())), tuple(sorted(self.parfor_dist.items())))

    def __getitem__(self, name: str) -> Distribution:
        return self.array_dist[name]

    def dist_of(self, name: str) -> Distribution:
        return self.array_dist.get(name, ONE_D)

    def lower(self, name: str, value: Distribution, cause: str, span=ir.NO_SPAN, source=None):
        old = self.array_dist.get(name)
        if old is None:
            return
        new = meet(old, value)
        if new != old:
            self.array_dist[name] = new
            self.changed = True
            if new == REP and name not in self.provenance:
                self.provenance[name] = Provenance(name, REP, cause, span, source)

    def lower_parfor(self, pid: int, value: Distribution, cause: str, span=ir.NO_SPAN, source=None):
        old = self.parfor_dist.get(pid, ONE_D)
        new = meet(old, value)
        if new != old:
            self.parfor_dist[pid] = new
            self.changed = True
            key = parfor_key(pid)
            if new == REP and key not in self.provenance:
                self.provenance[key] = Provenance(key, REP, cause, span, source)

    def leq(self, other: "DistEnv") -> bool:
        """Pointwise ``self <= other``."""
        return all(v <= other.array_dist.get(k, ONE_D) for k, v in self.array_dist.items()) and \
            all(v <= other.parfor_dist.get(k, ONE_D) for k, v in self.parfor_dist.items())

    def table(self) -> list:
        """Rows (name, distribution, cause) for arrays then parfors."""
        rows = []
        for name in sorted(self.array_dist):
            p = self.provenance.get(name)
            rows.append((name, self.array_dist[name], _cause_text(p)))
        for pid in sorted(self.parfor_dist):
            p = self.provenance.get(parfor_key(pid))
            rows.append((parfor_key(pid), self.parfor_dist[pid], _cause_text(p)))
        return rows


def parfor_key(pid: int) -> str:
    return f"parfor#{pid}"


def _cause_text(p: Provenance | None) -> str:
    if p is None:
        return ""
    return f"{p.cause} at line {p.span.line}" if p.span.line else p.cause


# -- known calls --------------------------------------------------------------

@dataclass(frozen=True)
class KnownCallRule:
    """How a known call constrains distributions.

    ``args``: "none" leaves array arguments alone, "result" meets them with the
    result array, "rep" forces them replicated. ``result``: "none", "rep" or
    "scalar" (no array result)."""

    args: str = "none"
    result: str = "none"


KNOWN_CALLS = {
    "reshape": KnownCallRule("result", "none"),
    "size": KnownCallRule("none", "scalar"),
    "length": KnownCallRule("none", "scalar"),
    "datasize": KnownCallRule("none", "scalar"),
    "rand": KnownCallRule("none", "none"),
    "randn": KnownCallRule("none", "none"),
    "zeros": KnownCallRule("none", "none"),
    "ones": KnownCallRule("none", "none"),
    "vector": KnownCallRule("none", "rep"),
    "sum": KnownCallRule("none", "scalar"),
    "prod": KnownCallRule("none", "scalar"),
    "min": KnownCallRule("none", "scalar"),
    "max": KnownCallRule("none", "scalar"),
    "indmin": KnownCallRule("none", "scalar"),
    "indmax": KnownCallRule("none", "scalar"),
    "DataSource": KnownCallRule("none", "none"),
    "DataSink": KnownCallRule("none", "none"),
    "block_start": KnownCallRule("none", "scalar"),
    "block_size": KnownCallRule("none", "scalar"),
}


def _array_args(env: DistEnv, args) -> list:
    return [a.name for a in args if isinstance(a, ir.Var) and a.name in env.array_dist]


# -- transfer functions (pure wrappers around in-place rules) -------------------------

def transfer_assignment(lhs: str, rhs: str, env: DistEnv, span=ir.NO_SPAN) -> DistEnv:
    env = env.copy()
    _assignment(env, lhs, rhs, span)
    return env


def transfer_call(call, env: DistEnv, lhs: str | None = None, span=ir.NO_SPAN) -> DistEnv:
    env = env.copy()
    _call(env, call, lhs, span or call.span)
    return env


def transfer_return(vars_, env: DistEnv, span=ir.NO_SPAN) -> DistEnv:
    env = env.copy()
    _return(env, vars_, span)
    return env


def transfer_gemm(node: ir.Gemm, env: DistEnv) -> DistEnv:
    env = env.copy()
    _gemm(env, node)
    return env


def transfer_parfor(p: ir.Parfor, env: DistEnv) -> DistEnv:
    env = env.copy()
    _parfor(env, p)
    return env


def _assignment(env, lhs, rhs, span):
    if lhs not in env.array_dist or rhs not in env.array_dist:
        return
    d = meet(env.array_dist[lhs], env.array_dist[rhs])
    env.lower(lhs, d, f"assigned from {rhs}", span, rhs)
    env.lower(rhs, d, f"assigned to {lhs}", span, lhs)


def _call(env, call, lhs, span):
    if isinstance(call, ir.UnknownCall):
        for a in _array_args(env, call.args):
            env.lower(a, REP, f"unknown call {call.name}", span)
        return
    rule = KNOWN_CALLS.get(call.name)
    if rule is None:  # not in the table: treat like an unknown call
        for a in _array_args(env, call.args):
            env.lower(a, REP, f"unknown call {call.name}", span)
        return
    arrays = _array_args(env, call.args)
    if rule.result == "rep" and lhs in env.array_dist:
        env.lower(lhs, REP, f"{call.name} result is replicated", span)
    if rule.args == "rep":
        for a in arrays:
            env.lower(a, REP, f"argument of {call.name}", span)
    elif rule.args == "result" and lhs in env.array_dist:
        for a in arrays:
            _assignment(env, lhs, a, span)


def _return(env, vars_, span):
    for v in vars_:
        env.lower(v, REP, CAUSE_RETURN, span)


def gemm_branch(x: Distribution, y: Distribution, lhs: Distribution,
                x_t: bool, y_t: bool) -> int:
    """Which of the four matrix-multiply rules applies."""
    if x == ONE_D and y == ONE_D and not x_t and y_t:
        return 1
    if x != TWO_D and y == ONE_D and not y_t and lhs == ONE_D:
        return 2
    if REP not in (x, y, lhs) and TWO_D in (x, y, lhs):
        return 3
    return 4


def gemm_result(x, y, lhs, x_t, y_t) -> tuple:
    """(lhs', x', y', needs_allreduce) produced by the matrix-multiply rule."""
    b = gemm_branch(x, y, lhs, x_t, y_t)
    if b == 1:
        return REP, x, y, True
    if b == 2:
        return lhs, REP, y, False
    if b == 3:
        return TWO_D, TWO_D, TWO_D, False
    return REP, REP, REP, False


def _gemm(env, g: ir.Gemm):
    names = (g.out, g.x, g.y)
    if any(n not in env.array_dist for n in names):
        return
    x, y, lhs = env.array_dist[g.x], env.array_dist[g.y], env.array_dist[g.out]
    branch = gemm_branch(x, y, lhs, g.x_transposed, g.y_transposed)
    new_lhs, new_x, new_y, allreduce = gemm_result(x, y, lhs, g.x_transposed, g.y_transposed)
    cause = {1: CAUSE_GEMM_REDUCTION, 2: CAUSE_GEMM_DOT,
             3: "matrix multiply with a 2D operand", 4: CAUSE_GEMM_NONE}[branch]
    env.lower(g.out, new_lhs, cause, g.span)
    env.lower(g.x, new_x, cause, g.span)
    env.lower(g.y, new_y, cause, g.span)
    env.gemm_info[g.out] = GemmInfo(g.out, g.x, g.y, (x, y, lhs), branch, allreduce)


def _copies_and_dependents(body, var: str):
    """Scalars that copy ``var`` and scalars whose value depends on it.

    Copies are found with a one-level scan (``t = var``); dependence follows
    scalar assignments transitively."""
    copies = {var}
    for s in ir.walk(body):
        if isinstance(s, ir.Assign) and isinstance(s.rhs, ir.Var) and s.rhs.name == var:
            copies.add(s.lhs)
    dependent = set(copies)
    changed = True
    while changed:
        changed = False
        for s in ir.walk(body):
            if isinstance(s, ir.Assign) and s.lhs and s.lhs not in dependent \
                    and ir.free_vars(s.rhs) & dependent:
                dependent.add(s.lhs)
                changed = True
    return copies, dependent


def _is_index(e, names) -> bool:
    return isinstance(e, ir.Var) and e.name in names


def _parfor(env, p: ir.Parfor):
    last = p.index_var
    copies, dependent = _copies_and_dependents(p.body, last)
    dist = env.parfor_dist.get(p.id, ONE_D)
    cause, source = None, None
    my_arrays = []

    def drop(value, why, src=None):
        nonlocal dist, cause, source
        new = meet(dist, value)
        if new != dist and new == REP and cause is None:
            cause, source = why, src
        dist = new

    accesses = list(ir.array_accesses(p.body))
    for arr, index, _ in accesses:
        if arr not in env.array_dist:
            continue
        if _is_index(index[-1], copies):
            if arr not in my_arrays:
                my_arrays.append(arr)
            drop(env.array_dist[arr], f"accesses replicated array {arr}", arr)
        elif ir.free_vars(index[-1]) & dependent:
            drop(REP, f"last index of {arr} depends on the parfor index", arr)
        for e in index[:-1]:
            if ir.free_vars(e) & dependent:
                drop(REP, f"parfor index used in a leading dimension of {arr}", arr)
    if dist == TWO_D and len(p.loop_nests) >= 2:
        inner = p.loop_nests[-2].var
        for arr, index, _ in accesses:
            if arr in my_arrays and (len(index) < 2 or not _is_index(index[-2], {inner})):
                drop(REP, f"2D access to {arr} does not follow the last two loop indices", arr)
    env.lower_parfor(p.id, dist, cause or "parfor constraint", p.span, source)
    for arr in my_arrays:
        env.lower(arr, dist, f"accessed in replicated parfor #{p.id}", p.span, parfor_key(p.id))


def _element_access_outside_parfor(env, s, span):
    for e in ir.stmt_exprs(s):
        for x in ir.sub_exprs(e):
            if isinstance(x, ir.ArrayRead):
                env.lower(x.array, REP, "element access outside a parfor", x.span or span)
    if isinstance(s, ir.ArrayWrite):
        env.lower(s.array, REP, "element access outside a parfor", span)


def _calls(env, s):
    """Apply call rules to calls nested anywhere in ``s``'s own expressions."""
    lhs = s.lhs if isinstance(s, ir.Assign) else None
    for e in ir.stmt_exprs(s):
        for x in ir.sub_exprs(e):
            if isinstance(x, (ir.KnownCall, ir.UnknownCall)):
                _call(env, x, lhs if x is e else None, x.span or s.span)


def apply_stmt(env: DistEnv, s, in_parfor: bool = False):
    """Apply every transfer rule that ``s`` triggers, in place."""
    if isinstance(s, ir.Parfor):
        _parfor(env, s)
        for r in s.reductions:
            if r.var in env.array_dist:
                env.lower(r.var, REP, f"array reduction variable of parfor #{s.id}", s.span)
        for b in s.body:
            apply_stmt(env, b, True)
        return
    if isinstance(s, ir.ForLoop):
        for b in s.body:
            apply_stmt(env, b, in_parfor)
        return
    if isinstance(s, ir.Gemm):
        _gemm(env, s)
        return
    if isinstance(s, ir.Return):
        _return(env, s.vars, s.span)
        return
    if isinstance(s, ir.Assign):
        rhs = s.rhs
        if isinstance(rhs, ir.Comprehension):
            # unlowered cartesian map: the output and every array indexed by
            # the outermost generator share a distribution, as in a parfor
            fake = ir.Parfor(-1, rhs.nests, (), rhs.body, s.span)
            env.parfor_dist.setdefault(-1, ONE_D)
            _parfor(env, fake)
            env.parfor_dist.pop(-1, None)
            env.provenance.pop(parfor_key(-1), None)
            for b in rhs.body:
                apply_stmt(env, b, True)
            return
        if s.lhs in env.array_dist and isinstance(rhs, ir.Var) and rhs.name in env.array_dist:
            _assignment(env, s.lhs, rhs.name, s.span)
            return
        if s.lhs in env.array_dist and isinstance(rhs, ir.ScalarOp):
            # unlowered elementwise map
            for a in _array_args(env, rhs.args):
                _assignment(env, s.lhs, a, s.span)
    _calls(env, s)
    if not in_parfor:
        _element_access_outside_parfor(env, s, s.span)


def initial_env(f: ir.FunctionIR, seed: DistEnv | None = None) -> DistEnv:
    env = DistEnv()
    for name in f.arrays():
        env.array_dist[name] = seed.array_dist.get(name, ONE_D) if seed else ONE_D
    for p in ir.iter_parfors(f.body):
        env.parfor_dist[p.id] = seed.parfor_dist.get(p.id, ONE_D) if seed else ONE_D
    if seed:
        env.provenance = {k: v for k, v in seed.provenance.items()
                          if k in env.array_dist or k.startswith("parfor#")}
    for s in ir.walk(f.body):
        if isinstance(s, ir.PartitionAnnotation) and s.array in env.array_dist:
            env.array_dist[s.array] = meet(env.array_dist[s.array], TWO_D)
    return env


def sweep(f: ir.FunctionIR, env: DistEnv, reverse: bool = False) -> bool:
    """One pass of every transfer function over the function. Returns True if
    anything changed."""
    env.changed = False
    stmts = list(f.body)
    if reverse:
        stmts = _reversed_deep(stmts)
    for s in stmts:
        apply_stmt(env, s)
    return env.changed


def _reversed_deep(body):
    out = []
    for s in reversed(body):
        if isinstance(s, ir.ForLoop):
            s = ir.ForLoop(s.var, s.lower, s.upper, tuple(_reversed_deep(list(s.body))), s.span, s.tag)
        out.append(s)
    return out


def sweep_bound(f: ir.FunctionIR) -> int:
    n_arrays = len(f.arrays())
    n_parfors = sum(1 for _ in ir.iter_parfors(f.body))
    return 2 * (n_arrays + n_parfors) + 1


def analyze(f: ir.FunctionIR, *, seed: DistEnv | None = None, reverse: bool = False,
            debug: bool = False, max_sweeps: int | None = None) -> DistEnv:
    """Run transfer functions to quiescence and return the converged env.

    ``env.sweeps`` counts sweeps including the final one that changes nothing.
    In debug mode ``env.history`` holds a snapshot after every sweep; each one
    is pointwise below the previous (the monotonicity witness)."""
    env = initial_env(f, seed)
    bound = max_sweeps if max_sweeps is not None else sweep_bound(f)
    sweeps = 0
    while True:
        sweeps += 1
        if sweeps > bound:
            raise NonConvergence(f"{f.name}: no fixed point after {bound} sweeps")
        before = env.copy() if debug else None
        changed = sweep(f, env, reverse)
        if debug:
            if not env.leq(before):
                raise AssertionError("transfer functions raised a distribution")
            env.history.append(env.copy())
        if not changed:
            break
    env.sweeps = sweeps
    return env


def explain(env: DistEnv, name: str) -> list:
    """Human-readable cause chain for ``name``'s distribution."""
    if name.startswith("parfor#"):
        pid = int(name[len("parfor#"):])
        if pid not in env.parfor_dist:
            raise KeyError(name)
        d = env.parfor_dist[pid]
    else:
        if name not in env.array_dist:
            raise KeyError(name)
        d = env.array_dist[name]
    if d == ONE_D:
        return [f"{name}: 1D_B (maximally parallel)"]
    if d == TWO_D:
        return [f"{name}: 2D_BC (two-dimensional block-cyclic)"]
    lines = []
    seen = set()
    cur = name
    while cur is not None and cur not in seen:
        seen.add(cur)
        p = env.provenance.get(cur)
        if p is None:
            break
        where = f" at line {p.span.line}" if p.span.line else ""
        prefix = f"{name}: " if cur == name else f"  because {cur}: "
        lines.append(f"{prefix}forced REP by {p.cause}{where}")
        cur = p.source
    if not lines:
        lines.append(f"{name}: REP")
    return lines


def rep_vars(env: DistEnv) -> set:
    return {k for k, v in env.array_dist.items() if v == REP}
