"""Reflected Brownian motion in polygons by Euler steps plus projection.

Each step adds a Gaussian increment; a candidate outside the closed domain
is moved to its nearest boundary point and the distance moved is added to
the local time.  Increments come from the counter-based generator in
``kernels`` keyed by ``(seed, path_id, step, lane)``, so any path can be
regenerated on its own and batches are reproducible bit for bit.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np

from . import kernels
from .geometry import DomainSpec, classify_points
from .stats import Estimate, wilson

MAX_PROJ_ITERS = 8
DT_TUBE = 1e-5
DT_DEFAULT = 1e-4
# Paths are standard Brownian motion (generator Laplacian/2), so an eigenvalue
# lam of -Laplacian corresponds to the exponential rate RATE_FACTOR * lam in time.
RATE_FACTOR = 0.5


class ProjectionError(RuntimeError):
    pass


@dataclass(frozen=True)
class PathState:
    position: tuple
    time: float = 0.0
    local_time: float = 0.0
    last_edge: int | None = None


@dataclass(frozen=True)
class SimConfig:
    """Time step, seed and time cap of a simulation.

    ``lane`` selects an independent family of noise streams for the same
    seed (used to drive several particles per path id).
    """

    dt: float = DT_DEFAULT
    rng_seed: int = 0
    scheme: str = "project"
    max_time: float = 1.0
    lane: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.scheme != "project":
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not 0 <= int(self.rng_seed) < 2**64:
            raise ValueError("rng_seed must fit in 64 bits")

    @property
    def max_steps(self):
        return int(math.ceil(self.max_time / self.dt - 1e-9))

    def increments(self, path_ids, step):
        """Brownian increments for ``step`` of each path, shape (n, 2)."""
        z = kernels.normals4(self.rng_seed, np.atleast_1d(path_ids), step, self.lane)
        return math.sqrt(self.dt) * z[:, :2]


def project_point(domain: DomainSpec, p):
    """Project ``p`` into the closed domain; returns (point, push, edge or None)."""
    q = np.asarray(p, float).reshape(1, 2)
    push_total = 0.0
    edge = None
    for _ in range(MAX_PROJ_ITERS):
        qx, qy, push, e, status, _ = kernels.project(q[:, 0], q[:, 1], domain.index)
        if status[0] >= 0:
            return q[0], push_total, edge
        q = np.array([[qx[0], qy[0]]])
        push_total += float(push[0])
        edge = int(e[0])
    st, _ = classify_points(domain, q)
    if st[0] < 0:
        raise ProjectionError(f"projection did not converge at {q[0].tolist()}")
    return q[0], push_total, edge


def step(domain: DomainSpec, state: PathState, dW, dt) -> PathState:
    """One Euler-projection step."""
    dW = np.asarray(dW, float)
    if not np.isfinite(dW).all():
        raise ValueError("non-finite increment")
    cand = np.asarray(state.position, float) + dW
    q, push, edge = project_point(domain, cand)
    return PathState((float(q[0]), float(q[1])), state.time + dt, state.local_time + push,
                     edge if edge is not None else state.last_edge)


class SimResult(NamedTuple):
    state: PathState
    steps: int
    stopped: bool
    trace: list | None


def simulate(domain: DomainSpec, start, config: SimConfig, stop: Callable | None = None,
             trace=False, path_id=0) -> SimResult:
    """Run one path until ``stop(state)`` holds or ``max_time`` is reached."""
    st = PathState(tuple(float(c) for c in start))
    rows = [] if trace else None
    if rows is not None:
        rows.append((path_id, 0, 0.0, st.position[0], st.position[1], 0.0, -1))
    for k in range(config.max_steps):
        if stop is not None and stop(st):
            return SimResult(st, k, True, rows)
        dW = config.increments([path_id], k)[0]
        st = step(domain, st, dW, config.dt)
        st = replace(st, time=(k + 1) * config.dt)
        if rows is not None:
            e = -1 if st.last_edge is None else st.last_edge
            rows.append((path_id, k + 1, st.time, st.position[0], st.position[1], st.local_time, e))
    stopped = stop is not None and stop(st)
    return SimResult(st, config.max_steps, stopped, rows)


# ---------------------------------------------------------------------------
# batched paths


@dataclass
class Batch:
    """State of many independent paths advanced together."""

    x: np.ndarray
    y: np.ndarray
    local_time: np.ndarray
    last_edge: np.ndarray
    hit_step: np.ndarray
    path_ids: np.ndarray
    steps: int = 0
    snapshots: dict = field(default_factory=dict)

    @property
    def alive(self):
        return self.hit_step < 0

    def positions(self):
        return np.column_stack([self.x, self.y])


def run_batch(domain: DomainSpec, starts, config: SimConfig, n_steps=None, path_ids=None,
              absorb_tags=(), target=None, snapshot_steps=(), step0=0):
    """Advance independent paths for ``n_steps`` Euler-projection steps.

    A path stops (its state freezes and ``hit_step`` records the step) when
    it is projected onto an edge whose tag is in ``absorb_tags`` or when
    ``target(x, y)`` is true after a step.  ``snapshot_steps`` lists step
    counts at which copies of ``(x, y, alive)`` are stored.
    """
    starts = np.atleast_2d(np.asarray(starts, float))
    n = len(starts)
    if path_ids is None:
        path_ids = np.arange(n, dtype=np.int64)
    path_ids = np.asarray(path_ids, dtype=np.int64)
    if n_steps is None:
        n_steps = config.max_steps
    bi = domain.index
    absorbing = np.array([t in absorb_tags for t in domain.tags], dtype=bool)
    b = Batch(starts[:, 0].copy(), starts[:, 1].copy(), np.zeros(n), np.full(n, -1, np.int64),
              np.full(n, -1, np.int64), path_ids)
    if target is not None:
        hit0 = target(b.x, b.y)
        b.hit_step[hit0] = 0
    snaps = sorted(set(int(s) for s in snapshot_steps))
    si = 0
    while si < len(snaps) and snaps[si] == 0:
        b.snapshots[0] = (b.x.copy(), b.y.copy(), b.alive.copy())
        si += 1
    sq = math.sqrt(config.dt)
    for k in range(int(n_steps)):
        idx = np.nonzero(b.hit_step < 0)[0]
        if idx.size:
            z = kernels.normals4(config.rng_seed, path_ids[idx], step0 + k, config.lane)
            cx = b.x[idx] + sq * z[:, 0]
            cy = b.y[idx] + sq * z[:, 1]
            qx, qy, push, e, status, _ = kernels.project(cx, cy, bi)
            b.x[idx] = qx
            b.y[idx] = qy
            b.local_time[idx] += push
            touched = e >= 0
            b.last_edge[idx[touched]] = e[touched]
            stop = np.zeros(idx.size, dtype=bool)
            if absorbing.any():
                stop |= touched & absorbing[np.where(touched, e, 0)]
            if target is not None:
                stop |= target(qx, qy)
            b.hit_step[idx[stop]] = k + 1
        b.steps = k + 1
        while si < len(snaps) and snaps[si] == k + 1:
            b.snapshots[k + 1] = (b.x.copy(), b.y.copy(), b.alive.copy())
            si += 1
        if idx.size == 0 and si >= len(snaps):
            break
    while si < len(snaps):
        b.snapshots[snaps[si]] = (b.x.copy(), b.y.copy(), b.alive.copy())
        si += 1
    return b


class HittingSample(NamedTuple):
    times: np.ndarray
    censored: np.ndarray

    def mean(self):
        return float(self.times[~self.censored].mean())


def hitting_time(domain: DomainSpec, start, target, config: SimConfig, n_paths=1000,
                 path_offset=0, absorb_tags=()):
    """First step time at which paths from ``start`` satisfy ``target``.

    ``target`` is a vectorized predicate ``(x, y) -> bool``; paths still
    outside it at ``max_time`` are censored.
    """
    starts = np.tile(np.asarray(start, float), (n_paths, 1))
    b = run_batch(domain, starts, config, path_ids=np.arange(path_offset, path_offset + n_paths),
                  target=target, absorb_tags=absorb_tags)
    cens = b.hit_step < 0
    t = np.where(cens, config.max_steps * config.dt, b.hit_step * config.dt)
    return HittingSample(t, cens)


class SurvivalCurve(NamedTuple):
    t: np.ndarray
    estimates: list  # one list of Estimate per start

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["start_id", "t", "p", "lo", "hi"])
        for s, row in enumerate(self.estimates):
            for tt, e in zip(self.t.tolist(), row):
                w.writerow([s, repr(tt), repr(e.value), repr(e.lo), repr(e.hi)])
        return buf.getvalue()


def survival_curve(domain: DomainSpec, starts, t_grid, n_paths, config: SimConfig,
                   absorb_tags=("dirichlet_d",)):
    """Monte Carlo ``P(T > t)`` for the first hit of the absorbing edges, with Wilson intervals.

    Path ids ``s * n_paths + i`` keep the streams of different starts disjoint.
    """
    t_grid = np.asarray(t_grid, float)
    steps = np.rint(t_grid / config.dt).astype(np.int64)
    out = []
    for s, start in enumerate(np.atleast_2d(starts)):
        pid = s * n_paths + np.arange(n_paths)
        b = run_batch(domain, np.tile(start, (n_paths, 1)), config, n_steps=int(steps.max()),
                      path_ids=pid, absorb_tags=absorb_tags)
        hs = b.hit_step
        row = [wilson(int(((hs < 0) | (hs > k)).sum()), n_paths) for k in steps]
        out.append(row)
    return SurvivalCurve(t_grid, out)


def heat_mass_split(domain: DomainSpec, start, t, n_paths, config: SimConfig, path_offset=0) -> Estimate:
    """Fraction of paths from ``start`` lying in ``{x2 < -1}`` at time ``t``."""
    n_steps = int(round(t / config.dt))
    pid = path_offset + np.arange(n_paths)
    b = run_batch(domain, np.tile(np.asarray(start, float), (n_paths, 1)), config, n_steps=n_steps,
                  path_ids=pid)
    return wilson(int((b.y < -1.0).sum()), n_paths)


def heat_mass_curve(domain: DomainSpec, start, t_grid, n_paths, config: SimConfig):
    """``heat_mass_split`` at several times from one set of paths."""
    steps = np.rint(np.asarray(t_grid, float) / config.dt).astype(np.int64)
    b = run_batch(domain, np.tile(np.asarray(start, float), (n_paths, 1)), config,
                  n_steps=int(steps.max()), snapshot_steps=steps)
    return [wilson(int((b.snapshots[int(k)][1] < -1.0).sum()), n_paths) for k in steps]


def trace_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["path_id", "step", "t", "x", "y", "local_time", "edge"])
    for r in rows:
        w.writerow([r[0], r[1], repr(r[2]), repr(r[3]), repr(r[4]), repr(r[5]), r[6]])
    return buf.getvalue()
