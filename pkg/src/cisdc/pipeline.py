"""Dependency-driven execution of one CISDCQ sweep.

A sweep with ``nu`` nested iterations over ``M`` nodes is a DAG of ``2 M nu``
cells: ``D(m, l)`` solves the diffusion stage at node ``m`` in iteration
``l`` and ``R(m, l)`` the reaction stage.  The executor hands ready cells to
a pool of worker threads.  Cells communicate only through the single-writer
slots of :class:`~cisdc.integrators.CisdcqSweep`, so every schedule yields
the same bits as the serial loop.
"""

import csv
from dataclasses import dataclass, field
import heapq
import queue
import threading
import time

from .errors import CisdcError, InvalidArgumentError, StageError
from .integrators import CisdcqSweep

__all__ = [
    "Cell",
    "TaskGraph",
    "TraceRecord",
    "ScheduleTrace",
    "build_task_graph",
    "critical_path",
    "Slot",
    "list_schedule",
    "simulate_makespan",
    "execute_pipelined",
    "pipelined_sweeper",
]

_KIND_ORDER = {"D": 0, "R": 1}


@dataclass(frozen=True, order=True)
class Cell:
    kind: str
    m: int
    ell: int

    @property
    def label(self):
        return f"{self.kind}({self.m},{self.ell})"

    def priority(self):
        # tie-break: iteration, then node, then diffusion before reaction
        return (self.ell, self.m, _KIND_ORDER[self.kind])


@dataclass
class TaskGraph:
    M: int
    nu: int
    cells: list
    edges: set
    preds: dict
    succs: dict

    def cost(self, cell, cost_ad=1.0, cost_r=1.0):
        return cost_ad if cell.kind == "D" else cost_r

    def topological_order(self):
        """Cells in a deterministic topological order (Kahn, priority tie-break)."""
        indeg = {c: len(self.preds[c]) for c in self.cells}
        heap = [(c.priority(), c) for c in self.cells if indeg[c] == 0]
        heapq.heapify(heap)
        out = []
        while heap:
            _, c = heapq.heappop(heap)
            out.append(c)
            for s in self.succs[c]:
                indeg[s] -= 1
                if indeg[s] == 0:
                    heapq.heappush(heap, (s.priority(), s))
        if len(out) != len(self.cells):
            raise CisdcError("task graph has a cycle")
        return out


def build_task_graph(M, nu):
    """Cells and dependency edges of a CISDCQ-``nu`` sweep over ``M`` nodes.

    ``D(m+1, l)`` waits for ``D(m, l)``, ``R(m-1, l)``, ``R(m, l-1)`` and
    ``R(m+1, l-1)``; ``R(m+1, l)`` waits for ``D(m+1, l)`` and ``R(m, l)``.
    References to node 0 or iteration 0 are sweep-``k`` data and add no edge.
    """
    for name, v in (("M", M), ("nu", nu)):
        if int(v) != v or v < 1:
            raise InvalidArgumentError(f"{name} must be a positive integer, got {v!r}")
    M, nu = int(M), int(nu)
    cells = [Cell(k, m, l) for l in range(1, nu + 1) for m in range(1, M + 1) for k in "DR"]
    edges = set()

    def add(src, dst):
        if src.m >= 1 and src.ell >= 1:
            edges.add((src, dst))

    for l in range(1, nu + 1):
        for n in range(1, M + 1):
            d, r = Cell("D", n, l), Cell("R", n, l)
            add(Cell("D", n - 1, l), d)
            add(Cell("R", n - 2, l), d)
            add(Cell("R", n - 1, l - 1), d)
            add(Cell("R", n, l - 1), d)
            add(d, r)
            add(Cell("R", n - 1, l), r)
    preds = {c: set() for c in cells}
    succs = {c: set() for c in cells}
    for a, b in edges:
        preds[b].add(a)
        succs[a].add(b)
    return TaskGraph(M=M, nu=nu, cells=cells, edges=edges, preds=preds, succs=succs)


def critical_path(graph, cost_ad=1.0, cost_r=1.0):
    """Longest weighted path through the DAG."""
    finish = {}
    for c in graph.topological_order():
        start = max((finish[p] for p in graph.preds[c]), default=0.0)
        finish[c] = start + graph.cost(c, cost_ad, cost_r)
    return max(finish.values())


@dataclass(frozen=True)
class Slot:
    worker: int
    start: float
    end: float


def list_schedule(graph, workers=None, cost_ad=1.0, cost_r=1.0):
    """Greedy list schedule: ``{cell: Slot}``; ``workers=None`` means unlimited.

    Whenever a worker is free, the ready cell that became ready first is
    started on the lowest-numbered free worker, ties broken by
    ``(l, m, D before R)``.
    """
    if cost_ad <= 0 or cost_r <= 0:
        raise InvalidArgumentError("costs must be positive")
    if workers is not None and workers < 1:
        raise InvalidArgumentError("workers must be >= 1")
    n_workers = len(graph.cells) if workers is None else int(workers)
    remaining = {c: len(graph.preds[c]) for c in graph.cells}
    ready_at = {}
    ready = []  # (ready time, priority, cell)
    for c in graph.cells:
        if remaining[c] == 0:
            heapq.heappush(ready, (0.0, c.priority(), c))
    running = []  # (finish time, priority, cell)
    free = list(range(n_workers))
    plan = {}
    now = 0.0

    def release(c):
        for s in graph.succs[c]:
            remaining[s] -= 1
            ready_at[s] = max(ready_at.get(s, 0.0), now)
            if remaining[s] == 0:
                heapq.heappush(ready, (ready_at[s], s.priority(), s))

    while len(plan) < len(graph.cells) or running:
        while free and ready and ready[0][0] <= now:
            _, _, c = heapq.heappop(ready)
            end = now + graph.cost(c, cost_ad, cost_r)
            plan[c] = Slot(heapq.heappop(free), now, end)
            heapq.heappush(running, (end, c.priority(), c))
        if not running:
            now = ready[0][0]
            continue
        now = running[0][0]
        # finish everything ending at this instant before dispatching again
        while running and running[0][0] == now:
            _, _, c = heapq.heappop(running)
            heapq.heappush(free, plan[c].worker)
            release(c)
    return plan


def simulate_makespan(graph, workers=None, cost_ad=1.0, cost_r=1.0):
    """Makespan of :func:`list_schedule`."""
    plan = list_schedule(graph, workers, cost_ad, cost_r)
    return max(slot.end for slot in plan.values())


@dataclass
class TraceRecord:
    cell: Cell
    worker: int
    start_ns: int
    end_ns: int
    start_tick: int
    end_tick: int


@dataclass
class ScheduleTrace:
    """What ran where and when during one pipelined sweep.

    Wall-clock times come from ``time.perf_counter_ns``.  Logical ticks are
    the unit-cost list schedule the executor followed.
    """

    records: list = field(default_factory=list)

    @property
    def makespan_ticks(self):
        return max((r.end_tick for r in self.records), default=0)

    def by_cell(self):
        return {r.cell: r for r in self.records}

    def edge_violations(self, graph):
        """Edges whose successor started before the predecessor ended."""
        rec = self.by_cell()
        bad = []
        for a, b in graph.edges:
            ra, rb = rec[a], rec[b]
            if rb.start_ns < ra.end_ns or rb.start_tick < ra.end_tick:
                bad.append((a, b))
        return bad

    def overlap_violations(self):
        """Pairs of cells that overlapped on the same worker."""
        bad = []
        per_worker = {}
        for r in self.records:
            per_worker.setdefault(r.worker, []).append(r)
        for rows in per_worker.values():
            rows.sort(key=lambda r: r.start_ns)
            for x, y in zip(rows, rows[1:]):
                if y.start_ns < x.end_ns or y.start_tick < x.end_tick:
                    bad.append((x.cell, y.cell))
        return bad

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cell", "kind", "m", "ell", "worker", "start_ns", "end_ns"])
            for r in sorted(self.records, key=lambda r: (r.start_ns, r.cell.priority())):
                w.writerow([r.cell.label, r.cell.kind, r.cell.m, r.cell.ell, r.worker, r.start_ns, r.end_ns])


_STOP = object()


def _worker_loop(wid, work, inbox, outbox):
    while True:
        cell = inbox.get()
        if cell is _STOP:
            return
        start = time.perf_counter_ns()
        try:
            work.run_cell(cell.kind, cell.m, cell.ell)
            error = None
        except BaseException as exc:  # reported to the coordinator
            error = exc
        outbox.put((cell, wid, start, time.perf_counter_ns(), error))


def execute_pipelined(problem, state, tables, dt, nu, workers=2, check=True):
    """Run one CISDCQ sweep on a pool of ``workers`` threads.

    Cells run on the worker and in the order fixed by the unit-cost
    :func:`list_schedule`; the coordinator releases a cell to its worker by
    message once the worker is idle and the cell's inputs are complete.

    Returns
    -------
    new_state : SweepState
        Bit-identical to :func:`~cisdc.integrators.cisdcq_sweep`.
    trace : ScheduleTrace

    Raises
    ------
    StageError
        If a cell fails; ``exc.cell`` names it.
    """
    if int(workers) != workers or workers < 1:
        raise InvalidArgumentError(f"workers must be a positive integer, got {workers!r}")
    workers = int(workers)
    work = CisdcqSweep(state, tables, problem, dt, nu)
    graph = build_task_graph(tables.M, nu)

    outbox = queue.Queue()
    inboxes = [queue.Queue() for _ in range(workers)]
    threads = [
        threading.Thread(target=_worker_loop, args=(w, work, inboxes[w], outbox), daemon=True)
        for w in range(workers)
    ]
    for t in threads:
        t.start()

    plan = list_schedule(graph, workers)
    queues = [
        sorted((c for c in graph.cells if plan[c].worker == w), key=lambda c: plan[c].start)
        for w in range(workers)
    ]
    done = set()
    busy = [False] * workers
    trace = ScheduleTrace()
    failure = None
    try:
        while len(done) < len(graph.cells):
            # hand each idle worker its next planned cell once its inputs exist
            for w in range(workers):
                if failure is None and not busy[w] and queues[w]:
                    cell = queues[w][0]
                    if graph.preds[cell] <= done:
                        inboxes[w].put(queues[w].pop(0))
                        busy[w] = True
            if not any(busy):
                break
            cell, wid, start, end, error = outbox.get()
            busy[wid] = False
            if error is not None:
                failure = failure or (cell, error)
                continue
            done.add(cell)
            slot = plan[cell]
            trace.records.append(TraceRecord(cell, wid, start, end, int(slot.start), int(slot.end)))
    finally:
        for box in inboxes:
            box.put(_STOP)
        for t in threads:
            t.join()

    if failure is not None:
        cell, error = failure
        exc = StageError(f"cell {cell.label} failed: {error}", node=cell.m)
        exc.cell = cell.label
        raise exc from error
    if check:
        bad = trace.edge_violations(graph) + trace.overlap_violations()
        if bad:
            raise CisdcError(f"schedule trace violates constraints: {bad[:3]}")
    return work.result(), trace


def pipelined_sweeper(nu, workers, traces=None):
    """Adapter for :func:`~cisdc.integrators.integrate`'s ``sweeper`` hook."""

    def run(state, tables, problem, dt):
        new, trace = execute_pipelined(problem, state, tables, dt, nu, workers)
        if traces is not None:
            traces.append(trace)
        return new

    return run
