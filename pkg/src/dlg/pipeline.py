"""End-to-end compilation keeping every intermediate stage."""
from __future__ import annotations

from dataclasses import dataclass, field

from . import analysis, checkpointing, distributed, ir, lowering, optimizer
from .analysis import DistEnv
from .frontend.lower import lower_to_ir
from .frontend.parser import parse

STAGES = ("frontend", "lowering", "optimizer", "checkpoint", "distributed")


@dataclass
class Compilation:
    path: str
    frontend: ir.FunctionIR
    lowering: ir.FunctionIR
    initial_env: DistEnv
    optimizer: ir.FunctionIR
    fusion: optimizer.FusionReport
    env: DistEnv
    checkpoint_plan: checkpointing.CheckpointPlan | None = None
    checkpoint: ir.FunctionIR | None = None
    restart: ir.FunctionIR | None = None
    checkpoint_error: str | None = None
    spmd: distributed.SpmdProgram | None = None
    spmd_restart: distributed.SpmdProgram | None = None
    spmd_error: str | None = None
    notes: list = field(default_factory=list)

    def stage(self, name: str) -> ir.FunctionIR:
        if name not in STAGES:
            raise KeyError(f"unknown stage {name!r} (choose from {', '.join(STAGES)})")
        if name == "distributed":
            if self.spmd is None:
                raise distributed.NotSupported(self.spmd_error or "no SPMD program")
            return self.spmd.function
        if name == "checkpoint":
            if self.checkpoint is None:
                raise checkpointing.CheckpointError(self.checkpoint_error or "no checkpoint stage")
            return self.checkpoint
        return getattr(self, name)


def front(source: str, path: str = "<input>") -> ir.FunctionIR:
    return lower_to_ir(parse(source, path), path)


def compile_source(source: str, path: str = "<input>", *, coherence: bool = True) -> Compilation:
    """Run every pass. Frontend errors propagate; checkpoint and SPMD stages
    that do not apply are recorded as errors on the result instead."""
    f0 = front(source, path)
    f1 = lowering.lower_to_parfors(lowering.tag_patterns(f0))
    env1 = analysis.analyze(f1)
    f2, env2, report = optimizer.optimize(f1, env1)
    env = analysis.analyze(f2, seed=env2)
    c = Compilation(path, f0, f1, env1, f2, report, env)
    try:
        c.checkpoint_plan = checkpointing.plan_checkpoint(f2, env)
        c.checkpoint = checkpointing.insert_checkpointing(f2, c.checkpoint_plan)
        c.restart = checkpointing.make_restart_version(c.checkpoint, c.checkpoint_plan)
    except checkpointing.CheckpointError as exc:
        c.checkpoint_error = str(exc)
    try:
        c.spmd = distributed.distribute(c.checkpoint or f2, env, coherence=coherence)
        if c.restart is not None:
            c.spmd_restart = distributed.distribute(c.restart, env, coherence=coherence)
    except distributed.NotSupported as exc:
        c.spmd_error = str(exc)
    return c


def compile_file(path: str, **kw) -> Compilation:
    with open(path, encoding="utf-8") as fh:
        return compile_source(fh.read(), path, **kw)
