"""Execution contexts: one per rank, plus the shared collective channel.

Ranks run as threads, but a baton lets only one of them execute program code
at a time; a rank hands the baton over when it blocks in a collective.
Collectives combine contributions in rank order, so results never depend on
scheduling.
"""
from __future__ import annotations

import hashlib
import os
import struct
import threading
import time

from . import datafile, rng
from .arrays import Array, DlgRuntimeError, ShapeMismatch, combine_values
from .checkpoint import CheckpointPolicy, CheckpointStore, SimulatedFailure, load_latest


class CollectiveMismatch(DlgRuntimeError):
    pass


class DivergenceDetected(DlgRuntimeError):
    pass


class WorldAborted(DlgRuntimeError):
    """Raised in ranks released from a collective because another rank failed."""


def partition(total: int, nranks: int, rank: int) -> tuple:
    """(start, size) of ``rank``'s block: the first ``total % nranks`` ranks get
    one extra element. ``start`` is zero-based."""
    if nranks < 1 or not 0 <= rank < nranks or total < 0:
        raise ValueError(f"bad partition request total={total} nranks={nranks} rank={rank}")
    base, extra = divmod(total, nranks)
    size = base + (1 if rank < extra else 0)
    start = rank * base + min(rank, extra)
    return start, size


def _shape(value):
    return value.dims if isinstance(value, Array) else ()


def _fingerprint(value) -> bytes:
    h = hashlib.sha256()
    if isinstance(value, Array):
        h.update(repr(value.dims).encode())
        for x in value.data:
            h.update(struct.pack("<d", float(x)))
    elif isinstance(value, float):
        h.update(struct.pack("<d", value))
    else:
        h.update(repr(value).encode())
    return h.digest()


class World:
    def __init__(self, nranks: int):
        self.nranks = nranks
        self.cond = threading.Condition()
        self.baton = threading.Lock()
        self.slots = {}
        self.results = {}
        self.finished = set()
        self.error = None

    def fail(self, exc: Exception) -> None:
        with self.cond:
            if self.error is None:
                self.error = exc
            self.cond.notify_all()

    def _raise_if_failed(self):
        if self.error is not None:
            if isinstance(self.error, (CollectiveMismatch, DivergenceDetected)):
                raise self.error
            raise WorldAborted(f"aborted: {self.error}")

    def _check_stuck(self):
        for seq, slot in self.slots.items():
            if len(slot) < self.nranks and self.finished - set(slot):
                tag = next(iter(slot.values()))[0]
                gone = sorted(self.finished - set(slot))
                err = CollectiveMismatch(
                    f"rank(s) {gone} finished while rank(s) {sorted(slot)} wait in collective {tag}")
                if self.error is None:
                    self.error = err
                self.cond.notify_all()
                return

    def collective(self, rank: int, seq: int, tag: str, shape, payload, resolve):
        self.baton.release()
        try:
            with self.cond:
                self._raise_if_failed()
                slot = self.slots.setdefault(seq, {})
                slot[rank] = (tag, shape, payload)
                if len(slot) == self.nranks:
                    kinds = {(t, s) for t, s, _ in slot.values()}
                    if len(kinds) > 1:
                        desc = ", ".join(f"rank {r}: {slot[r][0]} {list(slot[r][1])}"
                                         for r in sorted(slot))
                        self.error = self.error or CollectiveMismatch(f"collective mismatch ({desc})")
                        self.cond.notify_all()
                        self._raise_if_failed()
                    payloads = [slot[r][2] for r in range(self.nranks)]
                    try:
                        self.results[seq] = [resolve(payloads), self.nranks]
                    except Exception as exc:  # noqa: BLE001 - forwarded to every rank
                        self.error = self.error or exc
                        self.cond.notify_all()
                        raise
                    del self.slots[seq]
                    self.cond.notify_all()
                else:
                    self._check_stuck()
                    while seq not in self.results and self.error is None:
                        self.cond.wait()
                    if seq not in self.results:
                        self._raise_if_failed()
                entry = self.results[seq]
                entry[1] -= 1
                if entry[1] == 0:
                    del self.results[seq]
                value = entry[0]
        finally:
            self.baton.acquire()
        return value.copy() if isinstance(value, Array) else value

    def finish(self, rank: int) -> None:
        with self.cond:
            self.finished.add(rank)
            self._check_stuck()


class Context:
    """What generated code sees as ``rt``. With ``world=None`` this is the
    sequential reference context (rank 0 of 1, collectives are identities)."""

    def __init__(self, *, rank=0, nranks=1, world: World | None = None, seed=0,
                 io_root=None, externs=None, policy: CheckpointPolicy | None = None,
                 function="main", restart=False):
        self.rank = rank
        self.nranks = nranks
        self.world = world
        self.seed = seed
        self.io_root = io_root
        self.externs = externs or {}
        self.policy = policy
        self.function = function
        self.restart = restart
        self.seq = 0
        self.rand_calls = {}
        self.store = CheckpointStore(policy.directory, function) \
            if policy is not None and policy.directory else None

    def block_start(self, total):
        return partition(total, self.nranks, self.rank)[0]

    def block_size(self, total):
        return partition(total, self.nranks, self.rank)[1]

    # -- files
    def path(self, file: str, dataset: str) -> str:
        if self.io_root and not os.path.isabs(file):
            file = os.path.join(self.io_root, file)
        return datafile.dataset_path(file, dataset)

    def datasize(self, file, dataset, k, nd):
        path = self.path(file, dataset)
        _, dims = datafile.read_header(path)
        if len(dims) != nd:
            raise ShapeMismatch(f"{path}: dataset has {len(dims)} dimension(s), expected {nd}")
        return dims[k - 1]

    def _fill(self, arr: Array, elem, dims, data, path):
        if tuple(dims) != arr.dims:
            raise ShapeMismatch(f"{path}: block {list(dims)} does not fit array {list(arr.dims)}")
        if arr.elem == "f64":
            data = [float(x) for x in data] if elem != "f64" else data
        arr.data[:] = data

    def read_full(self, arr: Array, file, dataset):
        path = self.path(file, dataset)
        elem, dims, data = datafile.read_datafile(path)
        self._fill(arr, elem, dims, data, path)

    def block_read(self, arr: Array, file, dataset, start, size):
        path = self.path(file, dataset)
        elem, dims, data = datafile.block_read(path, start, size)
        self._fill(arr, elem, dims, data, path)

    def write_full(self, arr: Array, file, dataset):
        if self.rank == 0:
            datafile.write_datafile(self.path(file, dataset), arr.elem, arr.dims, arr.data)
        self.barrier(f"datasink:{dataset}")

    def block_write(self, arr: Array, file, dataset, start, size, total):
        path = self.path(file, dataset)
        dims = arr.dims[:-1] + (total,)

        def resolve(blocks):
            datafile.block_write(path, arr.elem, dims, blocks)
            return None
        self._collective(f"blockwrite:{dataset}", dims, list(arr.data), resolve)

    # -- random numbers
    def _invocation(self, site):
        n = self.rand_calls.get(site, 0)
        self.rand_calls[site] = n + 1
        return n

    def rand(self, site, *dims, start=0, normal=False):
        """Array of the given local dims whose elements take the global linear
        indices that follow ``start`` columns."""
        inv = self._invocation(site)
        lead = 1
        for d in dims[:-1]:
            lead *= d
        count = lead * dims[-1]
        gen = rng.normal if normal else rng.uniform
        return Array("f64", dims, gen(self.seed, site, inv, start * lead, count))

    # -- collectives
    def _collective(self, tag, shape, payload, resolve):
        self.seq += 1
        if self.world is None:
            return resolve([payload])
        return self.world.collective(self.rank, self.seq, tag, shape, payload, resolve)

    def barrier(self, tag="barrier"):
        self._collective(tag, (), None, lambda ps: None)

    def allreduce(self, value, combine, tag="allreduce"):
        def resolve(parts):
            acc = parts[0]
            if isinstance(acc, Array):
                out = list(acc.data)
                for p in parts[1:]:
                    out = [combine_values(combine, a, b) for a, b in zip(out, p.data)]
                return Array(acc.elem, acc.dims, out)
            for p in parts[1:]:
                acc = combine_values(combine, acc, p)
            return acc
        if self.world is None:
            return value
        return self._collective(f"allreduce:{tag}:{combine}", _shape(value), value, resolve)

    def coherence(self, names, values):
        prints = [_fingerprint(v) for v in values]

        def resolve(parts):
            for i, name in enumerate(names):
                column = [p[i] for p in parts]
                if len(set(column)) > 1:
                    bad = [r for r, x in enumerate(column) if x != column[0]]
                    raise DivergenceDetected(
                        f"replicated variable {name} differs on rank(s) {bad} from rank 0")
            return None
        if self.world is None:
            return
        self._collective("coherence:" + ",".join(names), (len(names),), prints, resolve)

    # -- externs
    def extern(self, name, args):
        fn = self.externs.get(name)
        if fn is None:
            raise DlgRuntimeError(f"extern {name} has no implementation")
        return fn(*args)

    # -- checkpointing
    def checkpoint(self, index, names, values):
        """Called first thing in every iteration of the checkpointed loop; saves
        the state after iteration ``index - 1``."""
        policy = self.policy
        if policy is None:
            return
        if self.rank == 0 and self.store is not None and policy.due():
            started = policy.clock()
            t0 = time.perf_counter()
            state = {"$index": index - 1}
            for n, v in zip(names, values):
                state[n] = v.copy() if isinstance(v, Array) else v
            self.store.write(index - 1, state)
            policy.written.append(index - 1)
            policy.record(started, max(policy.clock(), started + (time.perf_counter() - t0)))
        if policy.fail_at_iteration is not None and index == policy.fail_at_iteration:
            raise SimulatedFailure(f"injected failure at iteration {index}")

    def restore(self, names):
        """(completed iteration, values in ``names`` order) or None."""
        if self.store is None or not self.restart:
            return None
        found = load_latest(self.store)
        if found is None:
            return None
        iteration, state = found
        if any(n not in state for n in names):
            return None
        return iteration, [state[n] for n in names]

    def checkpoint_cleanup(self):
        if self.store is not None and self.rank == 0:
            self.store.cleanup()
