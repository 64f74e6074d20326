"""Per-round trajectory records and their CSV serialization."""
from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

CSV_SCHEMA_VERSION = 1


@dataclass
class TrajectoryLog:
    """Arrays indexed by round (row r holds round t = r + 1).

    ``x`` holds the base actions, ``R`` and ``C`` the observed cost and local
    constraint values.  For bandit runs ``x_hat`` holds the played query
    points and ``R``/``C`` are the values observed there.
    """

    dims: tuple
    x: np.ndarray          # (T, n)
    lam: np.ndarray        # (T, N, m)
    lam_mix: np.ndarray    # (T, N, m)
    R: np.ndarray          # (T, N)
    C: np.ndarray          # (T, N, m)
    alpha: np.ndarray      # (T,)
    beta: np.ndarray
    gamma: np.ndarray
    x_hat: Optional[np.ndarray] = None      # (T, n)
    direction: Optional[np.ndarray] = None  # (T, N) signed 1-based coordinate
    delta: Optional[np.ndarray] = None      # (T, N)
    meta: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return self.x.shape[0]

    @property
    def n_players(self) -> int:
        return len(self.dims)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.dims)])

    @property
    def is_bandit(self) -> bool:
        return self.x_hat is not None

    @property
    def played(self) -> np.ndarray:
        """Actions actually played (query points for bandit runs)."""
        return self.x_hat if self.is_bandit else self.x

    def block(self, arr: np.ndarray, i: int) -> np.ndarray:
        off = self.offsets
        return arr[:, off[i]:off[i + 1]]


class _LogBuilder:
    """Preallocated buffers filled round by round."""

    def __init__(self, dims, m, T, bandit=False):
        n, N = sum(dims), len(dims)
        self.dims = tuple(dims)
        self.x = np.empty((T, n))
        self.lam = np.empty((T, N, m))
        self.lam_mix = np.empty((T, N, m))
        self.R = np.empty((T, N))
        self.C = np.empty((T, N, m))
        self.sched = np.empty((T, 3))
        self.bandit = bandit
        if bandit:
            self.x_hat = np.empty((T, n))
            self.direction = np.empty((T, N), dtype=np.int64)
            self.delta = np.empty((T, N))

    def finish(self, meta=None) -> TrajectoryLog:
        kw = {}
        if self.bandit:
            kw = dict(x_hat=self.x_hat, direction=self.direction, delta=self.delta)
        return TrajectoryLog(self.dims, self.x, self.lam, self.lam_mix, self.R, self.C,
                             self.sched[:, 0].copy(), self.sched[:, 1].copy(),
                             self.sched[:, 2].copy(), meta=dict(meta or {}), **kw)


def _fmt(v: float) -> str:
    # repr is the shortest string that round-trips exactly
    return repr(float(v))


def csv_columns(log: TrajectoryLog) -> list:
    nmax = max(log.dims)
    m = log.lam.shape[2]
    cols = ["t", "i"] + [f"x_{k}" for k in range(nmax)]
    cols += [f"lam_{k}" for k in range(m)] + [f"lam_mix_{k}" for k in range(m)]
    cols += ["R"] + [f"C_{k}" for k in range(m)] + ["alpha", "beta", "gamma"]
    if log.is_bandit:
        cols += ["w", "delta"] + [f"xhat_{k}" for k in range(nmax)]
    return cols


def to_csv_text(log: TrajectoryLog) -> str:
    """One row per (round, player)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(csv_columns(log))
    nmax = max(log.dims)
    off = log.offsets
    for r in range(log.horizon):
        sched = [_fmt(log.alpha[r]), _fmt(log.beta[r]), _fmt(log.gamma[r])]
        for i, ni in enumerate(log.dims):
            xs = [_fmt(v) for v in log.x[r, off[i]:off[i + 1]]] + [""] * (nmax - ni)
            row = [str(r + 1), str(i)] + xs
            row += [_fmt(v) for v in log.lam[r, i]] + [_fmt(v) for v in log.lam_mix[r, i]]
            row += [_fmt(log.R[r, i])] + [_fmt(v) for v in log.C[r, i]] + sched
            if log.is_bandit:
                xh = [_fmt(v) for v in log.x_hat[r, off[i]:off[i + 1]]] + [""] * (nmax - ni)
                row += [str(int(log.direction[r, i])), _fmt(log.delta[r, i])] + xh
            w.writerow(row)
    return buf.getvalue()


def write_csv(log: TrajectoryLog, path) -> str:
    """Write the log and return the sha256 of the bytes written."""
    data = to_csv_text(log).encode()
    with open(path, "wb") as fh:
        fh.write(data)
    return hashlib.sha256(data).hexdigest()


def read_csv(path) -> TrajectoryLog:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ValueError(f"{path}: empty trajectory log")
    header, body = rows[0], rows[1:]
    col = {name: k for k, name in enumerate(header)}
    xcols = [k for k, h in enumerate(header) if h.startswith("x_")]
    lamcols = [k for k, h in enumerate(header) if h.startswith("lam_") and not h.startswith("lam_mix")]
    mixcols = [k for k, h in enumerate(header) if h.startswith("lam_mix_")]
    ccols = [k for k, h in enumerate(header) if h.startswith("C_")]
    hatcols = [k for k, h in enumerate(header) if h.startswith("xhat_")]
    bandit = "w" in col
    T = int(body[-1][col["t"]])
    N = int(body[-1][col["i"]]) + 1
    if len(body) != T * N:
        raise ValueError(f"{path}: expected {T * N} rows, found {len(body)}")
    dims = tuple(sum(1 for k in xcols if body[i][k] != "") for i in range(N))
    m = len(lamcols)
    b = _LogBuilder(dims, m, T, bandit=bandit)
    off = np.concatenate([[0], np.cumsum(dims)])
    for idx, row in enumerate(body):
        r, i = divmod(idx, N)
        if int(row[col["t"]]) != r + 1 or int(row[col["i"]]) != i:
            raise ValueError(f"{path}: rows out of order at line {idx + 2}")
        b.x[r, off[i]:off[i + 1]] = [float(row[k]) for k in xcols[:dims[i]]]
        b.lam[r, i] = [float(row[k]) for k in lamcols]
        b.lam_mix[r, i] = [float(row[k]) for k in mixcols]
        b.R[r, i] = float(row[col["R"]])
        b.C[r, i] = [float(row[k]) for k in ccols]
        b.sched[r] = [float(row[col["alpha"]]), float(row[col["beta"]]), float(row[col["gamma"]])]
        if bandit:
            b.direction[r, i] = int(row[col["w"]])
            b.delta[r, i] = float(row[col["delta"]])
            b.x_hat[r, off[i]:off[i + 1]] = [float(row[k]) for k in hatcols[:dims[i]]]
    return b.finish()


def file_sha256(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()
