"""Input-output windows and data-driven state reduction.

Stacks recent inputs and outputs into window vectors, assembles the window
data matrix, and computes reduction maps T so that z = T xi is a minimal
state coordinate: either by scanning for linearly independent rows
(noise-free data) or from the dominant left singular subspace (noisy data).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateData, DimensionMismatch, InsufficientHistory, NonFinite


class IoHistory:
    """Time-ordered record of applied inputs and measured outputs."""

    def __init__(self, inputs=None, outputs=None):
        self.inputs: list[np.ndarray] = []
        self.outputs: list[np.ndarray] = []
        if inputs is not None or outputs is not None:
            inputs = [] if inputs is None else list(inputs)
            outputs = [] if outputs is None else list(outputs)
            if len(inputs) != len(outputs):
                raise ValueError("inputs and outputs must have equal length")
            for u, y in zip(inputs, outputs):
                self.append(u, y)

    def append(self, u, y):
        u = np.asarray(u, dtype=float).reshape(-1)
        y = np.asarray(y, dtype=float).reshape(-1)
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(y))):
            raise NonFinite("history entries must be finite")
        if self.inputs:
            if u.shape != self.inputs[0].shape or y.shape != self.outputs[0].shape:
                raise DimensionMismatch("inconsistent channel counts in history")
        self.inputs.append(u)
        self.outputs.append(y)

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def m(self) -> int:
        return self.inputs[0].shape[0] if self.inputs else 0

    @property
    def p(self) -> int:
        return self.outputs[0].shape[0] if self.outputs else 0

    def slice(self, start: int, stop: int) -> "IoHistory":
        out = IoHistory()
        out.inputs = [u.copy() for u in self.inputs[start:stop]]
        out.outputs = [y.copy() for y in self.outputs[start:stop]]
        return out

    def input_array(self) -> np.ndarray:
        return np.array(self.inputs, dtype=float).reshape(len(self), -1)

    def output_array(self) -> np.ndarray:
        return np.array(self.outputs, dtype=float).reshape(len(self), -1)


def stack_window(history: IoHistory, t: int, lag: int) -> np.ndarray:
    """Window vector at time t: inputs then outputs, most recent first.

    Returns the concatenation
    ``(u_{t-1}, ..., u_{t-lag}, y_{t-1}, ..., y_{t-lag})``.

    Raises InsufficientHistory unless ``lag <= t <= len(history)``.
    """
    if lag < 1:
        raise ValueError("lag must be at least 1")
    if t < lag or t > len(history):
        raise InsufficientHistory(
            f"window at t={t} with lag={lag} needs samples {t - lag}..{t - 1}, "
            f"history has {len(history)}"
        )
    u_part = [history.inputs[t - i] for i in range(1, lag + 1)]
    y_part = [history.outputs[t - i] for i in range(1, lag + 1)]
    return np.concatenate(u_part + y_part)


def build_xi_matrix(history: IoHistory, t0: int, lag: int) -> np.ndarray:
    """Window data matrix with column j equal to the window at time lag + j.

    Shape is ``((m + p) * lag, t0)``; requires ``len(history) >= t0 + lag``.
    """
    if t0 < 1:
        raise ValueError("t0 must be at least 1")
    if len(history) < t0 + lag:
        raise InsufficientHistory(
            f"need {t0 + lag} samples for {t0} windows at lag {lag}, "
            f"history has {len(history)}"
        )
    cols = [stack_window(history, lag + j, lag) for j in range(t0)]
    return np.column_stack(cols)


@dataclass
class ReductionMap:
    """Linear map z = T xi from window vectors to reduced coordinates.

    Attributes:
        t_matrix: the map T, shape (reduced_dim, (m + p) * lag).
        reduced_dim: number of reduced coordinates r.
        input_rows: number of input rows m * lag in the window layout.
        mode: "rowselect" or "svd".
        gap_warning: True when the svd rule found no clear singular-value
            gap and fell back to the largest ratio.
        singular_values: spectrum of the window data matrix (svd mode only).
    """

    t_matrix: np.ndarray
    reduced_dim: int
    input_rows: int
    mode: str
    gap_warning: bool = False
    singular_values: np.ndarray | None = None

    @property
    def inferred_order(self) -> int:
        """Estimated plant order: reduced dimension minus input rows."""
        return self.reduced_dim - self.input_rows

    def to_json(self) -> str:
        payload = {
            "mode": self.mode,
            "reduced_dim": self.reduced_dim,
            "input_rows": self.input_rows,
            "gap_warning": self.gap_warning,
            "t_matrix": self.t_matrix.tolist(),
            "singular_values": None
            if self.singular_values is None
            else self.singular_values.tolist(),
        }
        return json.dumps(payload)

    @classmethod
    def from_json(cls, text: str) -> "ReductionMap":
        payload = json.loads(text)
        sv = payload.get("singular_values")
        return cls(
            t_matrix=np.array(payload["t_matrix"], dtype=float),
            reduced_dim=int(payload["reduced_dim"]),
            input_rows=int(payload["input_rows"]),
            mode=payload["mode"],
            gap_warning=bool(payload.get("gap_warning", False)),
            singular_values=None if sv is None else np.array(sv, dtype=float),
        )


def _check_xi_matrix(xi_mat, input_rows):
    xi_mat = np.asarray(xi_mat, dtype=float)
    if xi_mat.ndim != 2:
        raise ValueError("xi_mat must be 2-D")
    rows, cols = xi_mat.shape
    if not 0 < input_rows < rows:
        raise ValueError(f"input_rows={input_rows} out of range for {rows} rows")
    if cols < rows:
        raise DegenerateData(
            f"window matrix has {cols} columns but needs at least {rows}"
        )
    return xi_mat


def reduce_rowselect(xi_mat, input_rows: int, tol: float = 1e-8) -> ReductionMap:
    """Reduction by scanning rows top-down for a linearly independent subset.

    T is a 0/1 row-selection matrix.  Because input rows come first in the
    window layout and are independent under persistently exciting inputs,
    all of them are kept; the selected output rows then count the plant
    order.  Intended for noise-free data.

    Raises DegenerateData when fewer than ``input_rows`` independent rows
    are found among the input block.
    """
    xi_mat = _check_xi_matrix(xi_mat, input_rows)
    rows = xi_mat.shape[0]
    scale = np.linalg.norm(xi_mat, ord=2)
    if scale == 0.0:
        raise DegenerateData("window matrix is identically zero")
    selected = []
    basis = np.zeros((0, xi_mat.shape[1]))
    for i in range(rows):
        row = xi_mat[i]
        residual = row - basis.T @ (basis @ row)
        # Second orthogonalization pass keeps the basis clean.
        residual = residual - basis.T @ (basis @ residual)
        if np.linalg.norm(residual) > tol * scale:
            selected.append(i)
            basis = np.vstack([basis, residual / np.linalg.norm(residual)])
    n_inputs_kept = sum(1 for i in selected if i < input_rows)
    if n_inputs_kept < input_rows:
        raise DegenerateData(
            "input rows of the window matrix are linearly dependent; "
            "the excitation is not persistently exciting"
        )
    r = len(selected)
    t_matrix = np.zeros((r, rows))
    for k, i in enumerate(selected):
        t_matrix[k, i] = 1.0
    return ReductionMap(
        t_matrix=t_matrix, reduced_dim=r, input_rows=input_rows, mode="rowselect"
    )


def select_rank(singular_values, input_rows: int, gap_ratio: float = 1.8):
    """Reduced dimension from a singular-value gap.

    Picks the smallest r exceeding ``input_rows`` whose gap
    ``s_r / s_{r+1}`` reaches ``gap_ratio``.  When no candidate reaches it,
    falls back to the largest-ratio candidate and flags a warning.  Returns
    ``(r, gap_warning)``.
    """
    s = np.asarray(singular_values, dtype=float)
    count = s.shape[0]
    candidates = range(input_rows + 1, count)
    ratios = {}
    for r in candidates:
        lower = s[r] if s[r] > 0 else np.finfo(float).tiny
        ratios[r] = s[r - 1] / lower
    if not ratios:
        return count, False
    for r in sorted(ratios):
        if ratios[r] >= gap_ratio:
            return r, False
    best = max(sorted(ratios), key=lambda r: ratios[r])
    return best, True


def reduce_svd(
    xi_mat,
    input_rows: int,
    r_override: int | None = None,
    gap_ratio: float = 1.8,
) -> ReductionMap:
    """Reduction from the dominant left singular subspace of the data.

    With the thin SVD ``Xi = U diag(s) V^T``, the map is
    ``T = diag(s_1..s_r)^{-1} U_r^T`` so that T Xi recovers the leading
    right singular vectors (orthonormal rows).  The dimension r comes from
    :func:`select_rank` unless ``r_override`` pins it.
    """
    xi_mat = _check_xi_matrix(xi_mat, input_rows)
    rows = xi_mat.shape[0]
    u, s, _ = np.linalg.svd(xi_mat, full_matrices=False)
    warning = False
    if r_override is not None:
        if not input_rows < r_override <= rows:
            raise ValueError(
                f"r_override={r_override} must lie in ({input_rows}, {rows}]"
            )
        r = int(r_override)
    else:
        r, warning = select_rank(s, input_rows, gap_ratio)
    if s[r - 1] <= 1e-13 * s[0]:
        raise DegenerateData(
            f"singular value {r} of the window matrix is numerically zero"
        )
    t_matrix = (u[:, :r] / s[:r]).T
    return ReductionMap(
        t_matrix=t_matrix,
        reduced_dim=r,
        input_rows=input_rows,
        mode="svd",
        gap_warning=warning,
        singular_values=s.copy(),
    )


def reduce_state(reduction: ReductionMap, xi) -> np.ndarray:
    """Apply the reduction map: z = T xi."""
    xi = np.asarray(xi, dtype=float)
    flat = xi.reshape(-1) if xi.ndim == 1 else xi
    if flat.shape[0] != reduction.t_matrix.shape[1]:
        raise DimensionMismatch(
            f"window has {flat.shape[0]} entries, map expects "
            f"{reduction.t_matrix.shape[1]}"
        )
    return reduction.t_matrix @ flat
