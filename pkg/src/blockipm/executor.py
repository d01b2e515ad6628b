"""Two-level execution: blocks are split into G groups of contiguous ranges,
each group is processed as one batch, and group results are combined on the
root with an all-reduce.

In deterministic mode the all-reduce is a fixed binary tree over *global*
block indices, so the floating-point result does not depend on the number of
groups or on the order in which groups finish.
"""
from __future__ import annotations

import enum
import os
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass

import numpy as np


class ExecMode(enum.Enum):
    DETERMINISTIC = "deterministic"
    FAST = "fast"


@dataclass(frozen=True)
class Partition:
    N: int
    ranges: tuple  # ((lo, hi), ...) half-open, contiguous, covering 0..N

    @property
    def groups(self) -> int:
        return len(self.ranges)

    def sizes(self) -> list:
        return [hi - lo for lo, hi in self.ranges]

    def group_of(self, block: int) -> int:
        for k, (lo, hi) in enumerate(self.ranges):
            if lo <= block < hi:
                return k
        raise IndexError(block)


def partition(N: int, G: int) -> Partition:
    """Contiguous ranges whose sizes differ by at most one, larger groups first."""
    if N < 1:
        raise ValueError("need at least one block")
    if not 1 <= G <= N:
        raise ValueError(f"group count must lie in [1, {N}], got {G}")
    base, extra = divmod(N, G)
    ranges, lo = [], 0
    for k in range(G):
        size = base + (1 if k < extra else 0)
        ranges.append((lo, lo + size))
        lo += size
    return Partition(N, tuple(ranges))


# ---------------------------------------------------------------------------
# canonical reduction tree

def aligned_nodes(lo: int, hi: int) -> list:
    """Maximal aligned dyadic intervals ``[k 2^l, (k+1) 2^l)`` covering ``[lo, hi)``."""
    out = []
    while lo < hi:
        size = lo & -lo if lo else 1 << (hi - lo).bit_length()
        while size > hi - lo:
            size >>= 1
        out.append((lo, lo + size))
        lo += size
    return out


def tree_sum_range(values, lo: int, hi: int) -> dict:
    """Tree sums of the aligned nodes of ``[lo, hi)``; ``values[i - lo]`` is block ``i``."""
    out = {}
    for a, b in aligned_nodes(lo, hi):
        level = [values[i - lo] for i in range(a, b)]
        while len(level) > 1:
            level = [level[2 * k] + level[2 * k + 1] for k in range(len(level) // 2)]
        out[(a, b)] = level[0]
    return out


def merge_nodes(nodes: dict):
    """Combine aligned-node partial sums in the canonical order.

    Sibling nodes are merged into their parent while possible; what remains is
    the set of maximal nodes of ``[0, N)``, folded left to right.  The result
    only depends on the block values, not on how the nodes were produced.
    """
    nodes = dict(nodes)
    changed = True
    while changed:
        changed = False
        for (a, b) in sorted(nodes):
            if (a, b) not in nodes:
                continue
            size = b - a
            if a % (2 * size) == 0 and (b, b + size) in nodes:
                left = nodes.pop((a, b))
                right = nodes.pop((b, b + size))
                nodes[(a, b + size)] = left + right
                changed = True
    keys = sorted(nodes)
    total = nodes[keys[0]]
    for k in keys[1:]:
        total = total + nodes[k]
    return total


class Executor:
    """Runs per-group work on a thread pool and reduces group results.

    ``workers=1`` runs groups inline in order; larger values use threads.
    ``completion_order`` (testing hook) reorders how group results are handed
    to the reduction, to emulate a different arrival order.
    """

    def __init__(self, N: int, groups: int = 1, workers: int | None = None,
                 mode: ExecMode = ExecMode.DETERMINISTIC, completion_order=None):
        self.partition = partition(N, groups)
        self.workers = workers if workers is not None else min(groups, os.cpu_count() or 1)
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        self.mode = ExecMode(mode)
        self.completion_order = completion_order
        self._pool = ThreadPoolExecutor(self.workers) if self.workers > 1 else None

    @property
    def N(self) -> int:
        return self.partition.N

    @property
    def groups(self) -> int:
        return self.partition.groups

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _run(self, fn):
        """Run ``fn(k, lo, hi)`` for every group; yields ``(k, result)`` in arrival order."""
        ranges = self.partition.ranges
        if self._pool is None:
            results = [(k, fn(k, lo, hi)) for k, (lo, hi) in enumerate(ranges)]
        else:
            futures = {self._pool.submit(fn, k, lo, hi): k for k, (lo, hi) in enumerate(ranges)}
            results = [(futures[f], f.result()) for f in as_completed(futures)]
        if self.completion_order is not None:
            pos = {k: i for i, k in enumerate(self.completion_order)}
            results.sort(key=lambda kr: pos[kr[0]])
        return results

    def map_blocks(self, fn) -> list:
        """``fn(lo, hi)`` for every group; results ordered by group index."""
        out = self._run(lambda k, lo, hi: fn(lo, hi))
        return [r for _, r in sorted(out, key=lambda kr: kr[0])]

    def all_reduce_sum(self, fn):
        """Sum over blocks of ``fn(lo, hi)``, which returns a per-block sequence of addends.

        Deterministic mode combines through the canonical tree; fast mode adds
        plain group sums in arrival order.
        """
        if self.mode is ExecMode.DETERMINISTIC:
            def work(k, lo, hi):
                return tree_sum_range(fn(lo, hi), lo, hi)

            nodes = {}
            for _, part in self._run(work):
                nodes.update(part)
            return merge_nodes(nodes)

        def work_fast(k, lo, hi):
            vals = fn(lo, hi)
            acc = vals[0]
            for v in vals[1:]:
                acc = acc + v
            return acc

        results = self._run(work_fast)
        total = results[0][1]
        for _, r in results[1:]:
            total = total + r
        return total


def reduce_blocks(values, mode: ExecMode = ExecMode.DETERMINISTIC):
    """Sum a sequence of per-block addends as a single group would."""
    values = list(values)
    if ExecMode(mode) is ExecMode.DETERMINISTIC:
        return merge_nodes(tree_sum_range(values, 0, len(values)))
    acc = values[0]
    for v in values[1:]:
        acc = acc + v
    return acc


def as_array(x):
    return np.asarray(x)


def all_reduce_sum(parts, mode: ExecMode = ExecMode.DETERMINISTIC, partition: Partition | None = None):
    """Sum per-group partial matrices.

    In deterministic mode ``parts`` must be the per-block addends grouped by
    ``partition`` (a list of per-group sequences), so the canonical tree can
    be applied and the result does not depend on the grouping.  In fast mode
    ``parts`` are plain group sums added in the given order.
    """
    parts = list(parts)
    if not parts:
        raise ValueError("nothing to reduce")
    if ExecMode(mode) is ExecMode.FAST:
        total = as_array(parts[0]) if not isinstance(parts[0], (list, tuple)) else reduce_blocks(parts[0], mode)
        for p in parts[1:]:
            total = total + (p if not isinstance(p, (list, tuple)) else reduce_blocks(p, mode))
        return total
    if partition is None:
        sizes = [len(p) for p in parts]
        bounds = np.cumsum([0] + sizes)
        ranges = list(zip(bounds[:-1], bounds[1:]))
    else:
        ranges = partition.ranges
    nodes = {}
    for (lo, hi), p in zip(ranges, parts):
        nodes.update(tree_sum_range(list(p), int(lo), int(hi)))
    return merge_nodes(nodes)
