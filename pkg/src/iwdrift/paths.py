"""Reference path families and curvature-profile integration.

Paths are sampled every ``SPACING`` metres of arc length. For closed paths
whose length is not a multiple of the spacing, the segment from the last
waypoint back to the first is shorter than ``SPACING``; ``total_length`` is
always the true loop length.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

SPACING = 0.005
BETA_REF_GAIN = 0.9
BETA_REF_MAX = 0.9

PATH_COLUMNS = ("s", "x", "y", "theta", "kappa", "beta_ref")


def beta_reference(kappa):
    """Desired sideslip for a given curvature: opposite sign, capped at 0.9 rad."""
    kappa = np.asarray(kappa, dtype=np.float64)
    return -np.sign(kappa) * np.minimum(BETA_REF_MAX, BETA_REF_GAIN * np.abs(kappa))


@dataclass(frozen=True)
class ReferencePath:
    s: np.ndarray
    x: np.ndarray
    y: np.ndarray
    theta: np.ndarray
    kappa: np.ndarray
    beta_ref: np.ndarray
    closed: bool
    total_length: float
    name: str = "path"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.s) == 0:
            raise ValueError("a path needs at least one waypoint")
        for arr in (self.s, self.x, self.y, self.theta, self.kappa, self.beta_ref):
            arr.setflags(write=False)

    def __len__(self):
        return len(self.s)

    @property
    def n(self) -> int:
        return len(self.s)

    def table(self) -> np.ndarray:
        return np.column_stack([self.s, self.x, self.y, self.theta, self.kappa, self.beta_ref])


def _make(s, x, y, theta, kappa, closed, total_length, name, beta_ref=None):
    kappa = np.asarray(kappa, dtype=np.float64)
    if beta_ref is None:
        beta_ref = beta_reference(kappa)
    return ReferencePath(np.asarray(s, float), np.asarray(x, float), np.asarray(y, float),
                         np.asarray(theta, float), kappa, np.asarray(beta_ref, float),
                         bool(closed), float(total_length), name)


def _stations(length: float, closed: bool) -> np.ndarray:
    n = int(math.floor(length / SPACING + 1e-9))
    s = SPACING * np.arange(n + 1)
    if closed:
        # drop a station that would land on (or within rounding of) the loop closure
        if length - s[-1] < 1e-9:
            s = s[:-1]
    return s


def gen_circle(radius: float = 1.0, direction: int = 1) -> ReferencePath:
    """Circle centred at the origin starting at (radius, 0).

    ``direction=+1`` runs counter-clockwise (positive curvature).
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    if direction not in (1, -1):
        raise ValueError("direction must be +1 or -1")
    length = 2.0 * math.pi * radius
    s = _stations(length, closed=True)
    phi = direction * s / radius
    x = radius * np.cos(phi)
    y = radius * np.sin(phi)
    theta = phi + direction * 0.5 * math.pi
    kappa = np.full_like(s, direction / radius)
    name = f"circle_r{radius:g}_{'ccw' if direction > 0 else 'cw'}"
    return _make(s, x, y, theta, kappa, True, length, name)


# --- curvature profiles -------------------------------------------------------

@dataclass(frozen=True)
class Piece:
    """Curvature varying linearly from ``k0`` to ``k1`` over ``length`` metres."""

    length: float
    k0: float
    k1: float


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(6)


def _heading_at(pieces, starts, thetas0, s):
    idx = np.clip(np.searchsorted(starts, s, side="right") - 1, 0, len(pieces) - 1)
    k0 = np.array([p.k0 for p in pieces])[idx]
    k1 = np.array([p.k1 for p in pieces])[idx]
    ln = np.array([p.length for p in pieces])[idx]
    u = s - starts[idx]
    slope = np.where(ln > 0, (k1 - k0) / np.where(ln > 0, ln, 1.0), 0.0)
    theta = thetas0[idx] + k0 * u + 0.5 * slope * u * u
    kappa = k0 + slope * u
    return theta, kappa


def path_from_profile(pieces, x0: float = 0.0, y0: float = 0.0, theta0: float = 0.0,
                      closed: bool = False, name: str = "profile") -> ReferencePath:
    """Integrate a piecewise-linear curvature profile into waypoints.

    Heading is exact (piecewise quadratic in arc length); positions are
    integrated per waypoint interval with 6-point Gauss-Legendre quadrature.
    """
    pieces = [p for p in pieces if p.length > 0]
    if not pieces:
        raise ValueError("profile has zero length")
    lengths = np.array([p.length for p in pieces])
    starts = np.concatenate([[0.0], np.cumsum(lengths)[:-1]])
    total = float(lengths.sum())
    thetas0 = np.empty(len(pieces))
    th = theta0
    for i, p in enumerate(pieces):
        thetas0[i] = th
        th += 0.5 * (p.k0 + p.k1) * p.length

    s = _stations(total, closed)
    theta, kappa = _heading_at(pieces, starts, thetas0, s)

    # split each waypoint interval at profile breakpoints so quadrature sees smooth integrands
    grid = np.union1d(s, np.concatenate([starts, [total]]))
    grid = grid[grid <= s[-1] + 1e-12]
    a, b = grid[:-1], grid[1:]
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    nodes = mid[:, None] + half[:, None] * _GL_NODES[None, :]
    th_nodes, _ = _heading_at(pieces, starts, thetas0, nodes.ravel())
    th_nodes = th_nodes.reshape(nodes.shape)
    dx = (np.cos(th_nodes) * _GL_WEIGHTS).sum(axis=1) * half
    dy = (np.sin(th_nodes) * _GL_WEIGHTS).sum(axis=1) * half
    cx = np.concatenate([[x0], x0 + np.cumsum(dx)])
    cy = np.concatenate([[y0], y0 + np.cumsum(dy)])
    keep = np.searchsorted(grid, s)
    x = cx[keep]
    y = cy[keep]
    return _make(s, x, y, theta, kappa, closed, total, name)


def profile_end_pose(pieces, x0=0.0, y0=0.0, theta0=0.0):
    """Pose reached at the end of a profile (same quadrature as waypoints)."""
    pieces = [p for p in pieces if p.length > 0]
    lengths = np.array([p.length for p in pieces])
    starts = np.concatenate([[0.0], np.cumsum(lengths)[:-1]])
    thetas0 = np.empty(len(pieces))
    th = theta0
    for i, p in enumerate(pieces):
        thetas0[i] = th
        th += 0.5 * (p.k0 + p.k1) * p.length
    x, y = x0, y0
    for i, p in enumerate(pieces):
        n_sub = max(1, int(math.ceil(p.length / SPACING)))
        edges = starts[i] + np.linspace(0.0, p.length, n_sub + 1)
        half = 0.5 * np.diff(edges)
        nodes = (0.5 * (edges[:-1] + edges[1:]))[:, None] + half[:, None] * _GL_NODES[None, :]
        tn, _ = _heading_at(pieces, starts, thetas0, nodes.ravel())
        tn = tn.reshape(nodes.shape)
        x += float(((np.cos(tn) * _GL_WEIGHTS).sum(axis=1) * half).sum())
        y += float(((np.sin(tn) * _GL_WEIGHTS).sum(axis=1) * half).sum())
    return x, y, th


def gen_eight(radius: float = 1.0) -> ReferencePath:
    """Figure eight of two tangent circles, crossing at the origin heading +x.

    The left (counter-clockwise) lobe comes first, then the right lobe.
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    lobe = 2.0 * math.pi * radius
    total = 2.0 * lobe
    s = _stations(total, closed=True)
    first = s < lobe
    u = np.where(first, s, s - lobe)
    phi = u / radius
    x = radius * np.sin(phi)
    y = np.where(first, radius * (1.0 - np.cos(phi)), -radius * (1.0 - np.cos(phi)))
    # unwrapped: the second lobe unwinds the full turn of the first
    theta = np.where(first, phi, 2.0 * math.pi - phi)
    kappa = np.where(first, 1.0 / radius, -1.0 / radius)
    return _make(s, x, y, theta, kappa, True, total, f"eight_r{radius:g}")


VARIABLE_TIGHT = 1.0
VARIABLE_GENTLE = 0.5
VARIABLE_RAMP = 0.3
VARIABLE_GENTLE_LEN = 1.0


def variable_profile():
    """Four identical quarter-turns: tight arc, ramp, gentle arc, ramp.

    Each quarter turns exactly pi/2, so four of them close the loop by
    rotational symmetry.
    """
    ramp_turn = 2 * VARIABLE_RAMP * 0.5 * (VARIABLE_TIGHT + VARIABLE_GENTLE)
    tight_len = (0.5 * math.pi - ramp_turn - VARIABLE_GENTLE * VARIABLE_GENTLE_LEN) / VARIABLE_TIGHT
    quarter = [
        Piece(tight_len, VARIABLE_TIGHT, VARIABLE_TIGHT),
        Piece(VARIABLE_RAMP, VARIABLE_TIGHT, VARIABLE_GENTLE),
        Piece(VARIABLE_GENTLE_LEN, VARIABLE_GENTLE, VARIABLE_GENTLE),
        Piece(VARIABLE_RAMP, VARIABLE_GENTLE, VARIABLE_TIGHT),
    ]
    return quarter * 4


def gen_variable_curvature() -> ReferencePath:
    return path_from_profile(variable_profile(), closed=True, name="variable")


def gen_rings(radius: float = 1.0) -> ReferencePath:
    """Five circles in a row, each tangent to the next, chained into one path.

    Starts on the first circle at its tangency with the second, runs a full
    lap, then alternates half-laps over the three middle circles and ends with
    a full lap of the fifth. Curvature changes sign at each of the four
    tangent points. The path is open.
    """
    k = 1.0 / radius
    half = math.pi * radius
    pieces = [Piece(2 * half, k, k), Piece(half, -k, -k), Piece(half, k, k),
              Piece(half, -k, -k), Piece(2 * half, k, k)]
    return path_from_profile(pieces, x0=radius, y0=0.0, theta0=0.5 * math.pi, name="rings")


@dataclass(frozen=True)
class RandomPathConfig:
    segments_min: int = 4
    segments_max: int = 8
    seg_len_min: float = 1.5
    seg_len_max: float = 4.0
    kappa_min: float = 0.4
    kappa_max: float = 1.2
    ramp: float = 0.3
    flip_prob: float = 0.5


def random_profile(rng: np.random.Generator, cfg: RandomPathConfig = RandomPathConfig()):
    n_seg = int(rng.integers(cfg.segments_min, cfg.segments_max + 1))
    sign = 1.0 if rng.random() < 0.5 else -1.0
    kappas = []
    lengths = []
    for i in range(n_seg):
        if i > 0 and rng.random() < cfg.flip_prob:
            sign = -sign
        kappas.append(sign * rng.uniform(cfg.kappa_min, cfg.kappa_max))
        lengths.append(rng.uniform(cfg.seg_len_min, cfg.seg_len_max))
    pieces = []
    for i, (kap, ln) in enumerate(zip(kappas, lengths)):
        pieces.append(Piece(ln, kap, kap))
        if i + 1 < n_seg:
            pieces.append(Piece(cfg.ramp, kap, kappas[i + 1]))
    return pieces


def gen_random_path(seed, cfg: RandomPathConfig = RandomPathConfig()) -> ReferencePath:
    """Open path from a random piecewise curvature profile.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    path = path_from_profile(random_profile(rng, cfg), name="random")
    return path


def by_name(kind: str, **kw) -> ReferencePath:
    kind = kind.lower()
    if kind == "circle":
        return gen_circle(kw.get("radius", 1.0), kw.get("direction", 1))
    if kind == "eight":
        return gen_eight(kw.get("radius", 1.0))
    if kind == "variable":
        return gen_variable_curvature()
    if kind == "rings":
        return gen_rings(kw.get("radius", 1.0))
    if kind == "random":
        return gen_random_path(kw.get("seed", 0))
    raise ValueError(f"unknown path kind {kind!r}")


# --- CSV ----------------------------------------------------------------------

def write_path_csv(path: ReferencePath, filename) -> None:
    with open(filename, "w", newline="") as fh:
        fh.write(f"# name={path.name} closed={int(path.closed)} total_length={path.total_length!r}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PATH_COLUMNS)
        for row in path.table():
            w.writerow([repr(float(v)) for v in row])


def read_path_csv(filename) -> ReferencePath:
    meta = {}
    rows = []
    with open(filename, newline="") as fh:
        first = fh.readline()
        if first.startswith("#"):
            for tok in first[1:].split():
                key, _, val = tok.partition("=")
                meta[key] = val
            header = next(csv.reader([fh.readline()]))
        else:
            header = next(csv.reader([first]))
        if tuple(h.strip() for h in header) != PATH_COLUMNS:
            raise ValueError(f"{filename}: unexpected header {header}")
        for row in csv.reader(fh):
            if row:
                rows.append([float(v) for v in row])
    if not rows:
        raise ValueError(f"{filename}: no waypoints")
    arr = np.array(rows)
    closed = bool(int(meta.get("closed", "0")))
    if "total_length" in meta:
        total = float(meta["total_length"])
    else:
        total = float(arr[-1, 0])
    return _make(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4], closed, total,
                 meta.get("name", "path"), beta_ref=arr[:, 5])
