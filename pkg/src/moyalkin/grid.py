"""Phase-space grids, fields on them and their file formats."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GridUnderResolved

_MAGIC = b"MKFIELD1"
_HEADER = struct.Struct("<8s4d2i")


@dataclass(frozen=True)
class PhaseGrid:
    """Uniform cell-centred grid on ``[q_min, q_max] x [p_min, p_max]``."""

    q_min: float
    q_max: float
    p_min: float
    p_max: float
    n_q: int
    n_p: int

    def __post_init__(self):
        for n in (self.n_q, self.n_p):
            if int(n) != n or n < 4 or n % 2:
                raise ValueError(f"grid sizes must be even integers >= 4, got {n}")
        if not (self.q_max > self.q_min and self.p_max > self.p_min):
            raise ValueError("empty grid extent")

    @classmethod
    def symmetric(cls, q_half: float, p_half: float, n_q: int, n_p: int = None) -> "PhaseGrid":
        return cls(-q_half, q_half, -p_half, p_half, n_q, n_q if n_p is None else n_p)

    @property
    def dq(self) -> float:
        return (self.q_max - self.q_min) / self.n_q

    @property
    def dp(self) -> float:
        return (self.p_max - self.p_min) / self.n_p

    @property
    def q(self) -> np.ndarray:
        return self.q_min + (np.arange(self.n_q) + 0.5) * self.dq

    @property
    def p(self) -> np.ndarray:
        return self.p_min + (np.arange(self.n_p) + 0.5) * self.dp

    def mesh(self):
        """``(Q, P)`` arrays of shape ``(n_q, n_p)``."""
        return np.meshgrid(self.q, self.p, indexing="ij")

    @property
    def cell(self) -> float:
        return self.dq * self.dp

    def dual(self):
        """Frequencies ``(eta, xi)`` conjugate to ``(q, p)`` under the discrete transform."""
        deta = 2 * np.pi / (self.n_q * self.dq)
        dxi = 2 * np.pi / (self.n_p * self.dp)
        return deta * (np.arange(self.n_q) - self.n_q // 2), dxi * (np.arange(self.n_p) - self.n_p // 2)

    def refined(self, factor: int = 2) -> "PhaseGrid":
        return PhaseGrid(self.q_min, self.q_max, self.p_min, self.p_max, self.n_q * factor, self.n_p * factor)


@dataclass(frozen=True)
class PhaseSpaceField:
    grid: PhaseGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.n_q, self.grid.n_p):
            raise ValueError(f"values shape {v.shape} does not match grid {(self.grid.n_q, self.grid.n_p)}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def integral(self) -> float:
        return float(self.values.sum() * self.grid.cell)

    def moment(self, i: int, j: int) -> float:
        """``int q^i p^j f dq dp``."""
        qq, pp = self.grid.mesh()
        return float(np.sum(qq**i * pp**j * self.values) * self.grid.cell)

    def marginal_q(self) -> np.ndarray:
        return self.values.sum(axis=1) * self.grid.dp

    def marginal_p(self) -> np.ndarray:
        return self.values.sum(axis=0) * self.grid.dq

    def edge_ratio(self) -> float:
        """Largest boundary magnitude relative to the field maximum."""
        v = np.abs(self.values)
        edge = max(v[0].max(), v[-1].max(), v[:, 0].max(), v[:, -1].max())
        return float(edge / max(v.max(), 1e-300))

    def check_confined(self, tol: float = 1e-10):
        if self.edge_ratio() > tol:
            raise GridUnderResolved(f"field reaches the grid edge (ratio {self.edge_ratio():.2e} > {tol:.0e})")
        return self

    # ----------------------------------------------------------- I/O

    def to_csv(self, path, header: str = ""):
        qq, pp = self.grid.mesh()
        data = np.column_stack([qq.ravel(), pp.ravel(), self.values.ravel()])
        lines = [f"# {line}" for line in header.splitlines()] if header else []
        lines.append("q,p,value")
        np.savetxt(Path(path), data, delimiter=",", header="\n".join(lines), comments="", fmt="%.17g")

    def to_binary(self, path):
        g = self.grid
        with open(Path(path), "wb") as fh:
            fh.write(_HEADER.pack(_MAGIC, g.q_min, g.q_max, g.p_min, g.p_max, g.n_q, g.n_p))
            fh.write(self.values.astype("<f8").tobytes(order="C"))

    @classmethod
    def from_binary(cls, path) -> "PhaseSpaceField":
        raw = Path(path).read_bytes()
        magic, q0, q1, p0, p1, nq, np_ = _HEADER.unpack_from(raw)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a field file")
        vals = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(nq, np_)
        return cls(PhaseGrid(q0, q1, p0, p1, nq, np_), vals)

    @classmethod
    def from_csv(cls, path, grid: PhaseGrid) -> "PhaseSpaceField":
        data = np.loadtxt(Path(path), delimiter=",", comments="#", skiprows=_header_rows(path))
        return cls(grid, data[:, 2].reshape(grid.n_q, grid.n_p))


def _header_rows(path) -> int:
    with open(Path(path)) as fh:
        for i, line in enumerate(fh):
            if not line.startswith("#"):
                return i + 1  # the column-name line
    return 0
