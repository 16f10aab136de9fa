"""Curvilinear projection onto reference paths and body-frame previews.

A :class:`PathBank` concatenates several immutable paths so that a batch of
vehicles, each following its own path, can be projected with array ops.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dynamics
from .paths import SPACING, ReferencePath

SEARCH_WINDOW = 32
KAPPA_SPEED_FLOOR = 0.1
# sideslip is ill-conditioned near standstill, so its rate can spike; bound the result
KAPPA_LIMIT = 3.0


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    a = np.asarray(a, dtype=np.float64)
    out = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    return np.where(out == -np.pi, np.pi, out)


@dataclass
class TrackingErrors:
    e_pos: np.ndarray
    e_dir: np.ndarray
    e_kappa: np.ndarray
    e_beta: np.ndarray
    s_proj: np.ndarray
    index: np.ndarray  # nearest waypoint (local to its path), reusable as the next hint


class PathBank:
    def __init__(self, paths):
        self.paths = list(paths)
        if not self.paths:
            raise ValueError("PathBank needs at least one path")
        counts = np.array([p.n for p in self.paths], dtype=np.int64)
        self.counts = counts
        self.offsets = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
        self.closed = np.array([p.closed for p in self.paths], dtype=bool)
        self.lengths = np.array([p.total_length for p in self.paths], dtype=np.float64)
        self.s = np.concatenate([p.s for p in self.paths])
        self.x = np.concatenate([p.x for p in self.paths])
        self.y = np.concatenate([p.y for p in self.paths])
        self.theta = np.concatenate([p.theta for p in self.paths])
        self.kappa = np.concatenate([p.kappa for p in self.paths])
        self.beta_ref = np.concatenate([p.beta_ref for p in self.paths])
        self.last_s = self.s[self.offsets + counts - 1]

    def __len__(self):
        return len(self.paths)

    def local_index(self, pid, s):
        """Waypoint index nearest to arc length ``s`` (wrapping on closed paths)."""
        n = self.counts[pid]
        raw = np.rint(np.asarray(s) / SPACING).astype(np.int64)
        return np.where(self.closed[pid], np.mod(raw, n), np.clip(raw, 0, n - 1))

    def _full_search(self, pid, px, py):
        lo = self.offsets[pid]
        hi = lo + self.counts[pid]
        d2 = (self.x[lo:hi] - px) ** 2 + (self.y[lo:hi] - py) ** 2
        return int(np.argmin(d2))

    def nearest(self, pid, px, py, hint, window: int = SEARCH_WINDOW):
        """Nearest waypoint by local search around ``hint``.

        When the best candidate sits on the edge of the search window the
        window is widened eightfold, and if it still stalls (or there is no
        hint, signalled by a negative value) an exhaustive search is done.
        Widening first keeps vehicles from jumping to a distant branch of a
        self-crossing path.
        """
        pid = np.asarray(pid, dtype=np.int64)
        hint = np.asarray(hint, dtype=np.int64)
        px = np.asarray(px, dtype=np.float64)
        py = np.asarray(py, dtype=np.float64)
        best, stalled = self._window_search(pid, px, py, hint, window)
        redo = np.flatnonzero(stalled & (hint >= 0))
        if len(redo):
            b2, s2 = self._window_search(pid[redo], px[redo], py[redo], best[redo], 8 * window)
            best[redo] = b2
            stalled[redo] = s2
        for i in np.flatnonzero(stalled | (hint < 0)):
            best[i] = self._full_search(pid[i], px[i], py[i])
        return best

    def _window_search(self, pid, px, py, hint, window):
        n = self.counts[pid]
        closed = self.closed[pid]
        offs = np.arange(-window, window + 1)
        cand = np.maximum(hint, 0)[:, None] + offs[None, :]
        cand = np.where(closed[:, None], np.mod(cand, n[:, None]), np.clip(cand, 0, (n - 1)[:, None]))
        g = self.offsets[pid][:, None] + cand
        d2 = (self.x[g] - px[:, None]) ** 2 + (self.y[g] - py[:, None]) ** 2
        j = np.argmin(d2, axis=1)
        best = cand[np.arange(len(pid)), j]
        at_edge = (j == 0) | (j == 2 * window)
        endpoint = ~closed & ((best == 0) | (best == n - 1))
        stalled = at_edge & ~endpoint & (n > 2 * window + 1)
        return best, stalled

    def project(self, pid, px, py, psi, beta, kappa_vehicle, hint) -> TrackingErrors:
        pid = np.asarray(pid, dtype=np.int64)
        idx = self.nearest(pid, px, py, hint)
        g = self.offsets[pid] + idx
        th = self.theta[g]
        c, s = np.cos(th), np.sin(th)
        dx = px - self.x[g]
        dy = py - self.y[g]
        e_pos = c * dy - s * dx
        along = np.clip(c * dx + s * dy, -0.5 * SPACING, 0.5 * SPACING)
        s_proj = self.s[g] + along
        length = self.lengths[pid]
        wrapped = np.mod(s_proj, length)
        wrapped = np.where(wrapped >= length, 0.0, wrapped)
        s_proj = np.where(self.closed[pid], wrapped, np.clip(s_proj, 0.0, self.last_s[pid]))
        e_dir = wrap_angle(psi + beta - th)
        e_kappa = kappa_vehicle - self.kappa[g]
        e_beta = wrap_angle(beta - self.beta_ref[g])
        return TrackingErrors(e_pos, e_dir, e_kappa, e_beta, s_proj, idx)

    def preview(self, pid, s_proj, px, py, psi, n_points: int = 10, spacing: float = 0.1) -> np.ndarray:
        """``(N, n_points, 4)`` of (x_rel, y_rel, theta_rel, beta_ref) in the body frame."""
        if n_points < 1:
            raise ValueError("n_points must be >= 1")
        pid = np.asarray(pid, dtype=np.int64)
        ahead = s_proj[:, None] + spacing * np.arange(1, n_points + 1)[None, :]
        pid2 = np.broadcast_to(pid[:, None], ahead.shape)
        closed = self.closed[pid2]
        ahead = np.where(closed, np.mod(ahead, self.lengths[pid2]), ahead)
        g = self.offsets[pid2] + self.local_index(pid2, ahead)
        c = np.cos(psi)[:, None]
        s = np.sin(psi)[:, None]
        dx = self.x[g] - px[:, None]
        dy = self.y[g] - py[:, None]
        out = np.empty(ahead.shape + (4,))
        out[..., 0] = c * dx + s * dy
        out[..., 1] = -s * dx + c * dy
        out[..., 2] = wrap_angle(self.theta[g] - psi[:, None])
        out[..., 3] = self.beta_ref[g]
        return out

    def progress(self, pid, s_old, s_new):
        """Signed arc-length advance, unwrapped across the closure of loops."""
        ds = s_new - s_old
        pid = np.asarray(pid, dtype=np.int64)
        length = self.lengths[pid]
        wrapped = np.mod(ds + 0.5 * length, length) - 0.5 * length
        return np.where(self.closed[pid], wrapped, ds)


def vehicle_curvature(state, prev_beta=None, dt: float = dynamics.DEFAULT_DT):
    """Curvature of the centre-of-mass trajectory, (r + dbeta/dt) / V."""
    beta = dynamics.sideslip(state)
    if prev_beta is None:
        beta_rate = np.zeros_like(beta)
    else:
        beta_rate = wrap_angle(beta - prev_beta) / dt
    v = np.maximum(dynamics.speed(state), KAPPA_SPEED_FLOOR)
    return np.clip((state[:, dynamics.PSIDOT] + beta_rate) / v, -KAPPA_LIMIT, KAPPA_LIMIT)


def _as_batch(state):
    state = np.asarray(state, dtype=np.float64)
    return (state[None, :], True) if state.ndim == 1 else (state, False)


def project(state, path: ReferencePath, hint=-1, prev_beta=None, dt: float = dynamics.DEFAULT_DT) -> TrackingErrors:
    """Tracking errors of one or more vehicles against a single path."""
    batch, single = _as_batch(state)
    bank = PathBank([path])
    n = batch.shape[0]
    beta = dynamics.sideslip(batch)
    if prev_beta is not None:
        prev_beta = np.broadcast_to(np.asarray(prev_beta, dtype=np.float64), (n,))
    kap = vehicle_curvature(batch, prev_beta, dt)
    err = bank.project(np.zeros(n, dtype=np.int64), batch[:, 0], batch[:, 1], batch[:, 2], beta, kap,
                       np.broadcast_to(np.asarray(hint, dtype=np.int64), (n,)))
    if single:
        return TrackingErrors(float(err.e_pos[0]), float(err.e_dir[0]), float(err.e_kappa[0]),
                              float(err.e_beta[0]), float(err.s_proj[0]), int(err.index[0]))
    return err


def preview(state, path: ReferencePath, s_proj, n_points: int = 10, spacing: float = 0.1) -> np.ndarray:
    batch, single = _as_batch(state)
    n = batch.shape[0]
    bank = PathBank([path])
    out = bank.preview(np.zeros(n, dtype=np.int64), np.broadcast_to(np.asarray(s_proj, float), (n,)),
                       batch[:, 0], batch[:, 1], batch[:, 2], n_points, spacing)
    return out[0] if single else out
