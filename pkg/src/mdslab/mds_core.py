"""Finite weighted MDS pipeline.

Double centering of the squared-distance kernel, a deterministic symmetric
eigendecomposition, the spectral embedding maps (positive part, negative
part, and the combined indefinite-signature map), strain evaluation, and the
exact squared-distance reconstruction identity

    sum_j lambda_j (u_j(x_i) - u_j(x_k))^2 = d(x_i, x_k)^2,

which holds over the full signed spectrum for every finite space.

Conventions. The operator is represented in the symmetrized basis
S = W^{1/2} K_T W^{1/2} with W = diag(w), so that unit eigenvectors v of S
correspond to eigenfunctions u = v / sqrt(w) normalized in L^2(mu_n). With
uniform weights, S coincides with the classical double-centered matrix
P K P / n, and u = sqrt(n) v.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .spaces import BadWeights, FiniteSpace


class NoConvergence(RuntimeError):
    """The symmetric eigensolver failed to converge."""


class DimensionMismatch(ValueError):
    pass


class NonUniformWeights(ValueError):
    """Strain is defined only for uniformly weighted spaces."""


UNIFORM_WEIGHT_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class CenteredOperator:
    """Centered kernel operator of a finite space.

    ``kernel_matrix`` is the raw kernel K = -D*D/2, ``S`` the symmetrized
    centered operator W^{1/2} K_T W^{1/2}. The vector sqrt(w) spans the
    structural null direction of S (constants are killed by centering).
    """

    S: np.ndarray
    w: np.ndarray
    kernel_matrix: np.ndarray

    @property
    def n(self) -> int:
        return self.S.shape[0]

    @property
    def centered_kernel(self) -> np.ndarray:
        """K_T recovered from the symmetrized form."""
        inv = 1.0 / np.sqrt(self.w)
        return self.S * inv[:, None] * inv[None, :]


def double_center(space: FiniteSpace) -> CenteredOperator:
    """Weighted double centering of the kernel K = -D*D/2.

    K_T subtracts weighted row and column averages and adds back the grand
    average; S = W^{1/2} K_T W^{1/2} is symmetric and shares the spectrum of
    the centered operator on L^2(mu_n).
    """
    K = -0.5 * space.D**2
    w = space.w
    r = K @ w
    g = float(w @ r)
    KT = K - r[:, None] - r[None, :] + g
    sq = np.sqrt(w)
    S = KT * sq[:, None] * sq[None, :]
    S = (S + S.T) / 2.0
    S.setflags(write=False)
    return CenteredOperator(S=S, w=w, kernel_matrix=K)


@dataclass(frozen=True, eq=False)
class EmbeddingResult:
    """Full signed spectrum and eigenfunction table of a centered operator.

    ``eigenvalues`` are sorted descending with near-zero values clamped to 0;
    column j of ``U`` holds the eigenfunction u_j at the sample points,
    normalized so that sum_i w_i u_j(x_i)^2 = 1.
    """

    eigenvalues: np.ndarray
    U: np.ndarray
    w: np.ndarray
    positive_count: int
    negative_count: int
    m: int

    @property
    def n(self) -> int:
        return self.eigenvalues.shape[0]


@dataclass(frozen=True)
class KreinPoint:
    """Image of one point under the pair map (positive part, negative part)."""

    positive_part: np.ndarray
    negative_part: np.ndarray

    @property
    def pseudo_norm_sq(self) -> float:
        return float(self.positive_part @ self.positive_part) - float(
            self.negative_part @ self.negative_part
        )


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    out = vecs.copy()
    for j in range(out.shape[1]):
        k = int(np.argmax(np.abs(out[:, j])))
        if out[k, j] < 0.0:
            out[:, j] = -out[:, j]
    return out


def _order_degenerate_blocks(vals: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    """Within blocks of exactly equal eigenvalues, order columns lexicographically."""
    out = vecs.copy()
    start = 0
    n = vals.size
    while start < n:
        stop = start + 1
        while stop < n and vals[stop] == vals[start]:
            stop += 1
        if stop - start > 1:
            cols = sorted(range(start, stop), key=lambda c: tuple(out[:, c]))
            out[:, start:stop] = out[:, cols]
        start = stop
    return out


def eigendecompose(op: CenteredOperator) -> EmbeddingResult:
    """Full deterministic spectral decomposition of the centered operator.

    Eigenvalues are sorted descending; each eigenvector sign is fixed so its
    first largest-magnitude component is positive; eigenvalues below
    n * eps * ||S|| in magnitude are clamped to zero (this separates the
    structural constant-direction null space from round-off). Eigenfunction
    values are recovered as u_j(x_i) = v_j[i] / sqrt(w_i).
    """
    if op.w.min() <= 0.0:
        i = int(np.argmin(op.w))
        raise BadWeights(
            f"w[{i}]={op.w[i]!r}: eigenfunction recovery needs strictly positive weights"
        )
    try:
        vals, vecs = np.linalg.eigh(op.S)
    except np.linalg.LinAlgError as exc:
        absS = float(np.abs(op.S).max())
        raise NoConvergence(
            f"eigensolver did not converge on n={op.n} matrix, max|S|={absS!r}"
        ) from exc
    order = np.argsort(-vals, kind="stable")
    vals = vals[order]
    vecs = vecs[:, order]

    scale = float(np.max(np.abs(vals))) if vals.size else 0.0
    clamp = op.n * np.finfo(float).eps * scale
    vals = np.where(np.abs(vals) <= clamp, 0.0, vals)

    vecs = _fix_signs(vecs)
    vecs = _order_degenerate_blocks(vals, vecs)

    U = vecs / np.sqrt(op.w)[:, None]
    pos = int(np.sum(vals > 0.0))
    neg = int(np.sum(vals < 0.0))
    vals.setflags(write=False)
    U.setflags(write=False)
    return EmbeddingResult(
        eigenvalues=vals, U=U, w=op.w, positive_count=pos, negative_count=neg, m=pos
    )


def spectral_embedding(space: FiniteSpace) -> EmbeddingResult:
    """Convenience: double centering followed by eigendecomposition."""
    return eigendecompose(double_center(space))


def embed(result: EmbeddingResult, m: int) -> np.ndarray:
    """m-dimensional embedding: point i maps to (sqrt(lambda_j) u_j(x_i))_{j<=m}
    over the m largest positive eigenvalues, padding with zeros past the
    positive rank."""
    if m < 1:
        raise DimensionMismatch(f"embedding dimension must be >= 1, got {m}")
    k = min(m, result.positive_count)
    out = np.zeros((result.n, m))
    if k:
        out[:, :k] = result.U[:, :k] * np.sqrt(result.eigenvalues[:k])
    return out


def gram_configuration(result: EmbeddingResult, m: Optional[int] = None) -> np.ndarray:
    """Strain-optimal point configuration y_i = (sqrt(lambda_j) v_j[i])_j.

    This is the eigenvector-scaled variant whose Gram matrix is the best
    positive semidefinite rank-m approximation of S; for uniform weights it
    equals :func:`embed` divided by sqrt(n).
    """
    if m is None:
        m = result.positive_count
    return embed(result, max(m, 1)) * np.sqrt(result.w)[:, None]


def embed_negative(result: EmbeddingResult) -> np.ndarray:
    """Embedding built from the negative spectrum: coordinates
    sqrt(|lambda_j^-|) u_j^-(x_i), largest magnitude first."""
    k = result.negative_count
    out = np.zeros((result.n, k))
    if k:
        cols = np.arange(result.n - 1, result.n - 1 - k, -1)
        out[:, :] = result.U[:, cols] * np.sqrt(-result.eigenvalues[cols])
    return out


def krein_map(result: EmbeddingResult) -> list[KreinPoint]:
    """Combined map N = (M, M^-) into the indefinite inner-product space."""
    P = embed(result, max(result.positive_count, 1))[:, : result.positive_count]
    N = embed_negative(result)
    return [KreinPoint(positive_part=P[i].copy(), negative_part=N[i].copy()) for i in range(result.n)]


def reconstruct_distance_sq(result: EmbeddingResult, i: int, j: int) -> float:
    """Signed spectral reconstruction of the squared distance between points i, j."""
    du = result.U[i] - result.U[j]
    return float(np.sum(result.eigenvalues * du * du))


def reconstruction_matrix(result: EmbeddingResult) -> np.ndarray:
    """All-pairs signed reconstruction: entry (i, j) is reconstruct_distance_sq(i, j)."""
    KT = (result.U * result.eigenvalues) @ result.U.T
    diag = np.diagonal(KT)
    out = diag[:, None] + diag[None, :] - KT - KT.T
    return out


def strain(op: CenteredOperator, points: np.ndarray) -> float:
    """Strain of a candidate configuration: sum_ij (S_ij - y_i . y_j)^2.

    Defined for uniformly weighted spaces, where S equals the classical
    double-centered matrix; weighted inputs are rejected.
    """
    n = op.n
    if np.max(np.abs(op.w - 1.0 / n)) > UNIFORM_WEIGHT_TOL:
        raise NonUniformWeights("strain requires uniform weights 1/n")
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] != n:
        raise DimensionMismatch(f"expected {n} points, got array of shape {pts.shape}")
    G = pts @ pts.T
    return float(np.sum((op.S - G) ** 2))


def lp_normalize(result: EmbeddingResult, p: float) -> np.ndarray:
    """Positive-part embedding with eigenfunctions renormalized in L^p(mu_n).

    Coordinates are sqrt(lambda_j) u_j(x_i) / ||u_j||_p with
    ||u||_p = (sum_i w_i |u(x_i)|^p)^(1/p). Requires finite p >= 4.
    """
    if not math.isfinite(p) or p < 4.0:
        raise ValueError(f"L^p normalization needs finite p >= 4, got {p}")
    k = result.positive_count
    out = np.zeros((result.n, k))
    if k:
        Upos = result.U[:, :k]
        norms = (result.w @ np.abs(Upos) ** p) ** (1.0 / p)
        out[:, :] = Upos * (np.sqrt(result.eigenvalues[:k]) / norms)
    return out


def tail_diagnostic(result: EmbeddingResult, m: int) -> float:
    """Report sup over sample points of sum_{j>m} lambda_j^+ u_j^+(x)^2.

    Diagnostic only: a vanishing tail (uniformly in refinements) is what
    upgrades almost-everywhere injectivity of the embedding to injectivity
    everywhere, but nothing is asserted here.
    """
    k = result.positive_count
    if m >= k:
        return 0.0
    lam = result.eigenvalues[m:k]
    Utail = result.U[:, m:k]
    return float(np.max((Utail**2) @ lam))


# ---------------------------------------------------------------------------
# CSV persistence: first line holds the eigenvalues, then n rows of u_j(x_i).


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_embedding_csv(result: EmbeddingResult, path: str) -> None:
    lines = [",".join(_fmt(v) for v in result.eigenvalues)]
    for row in result.U:
        lines.append(",".join(_fmt(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_embedding_csv(path: str) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    lam = np.array([float(v) for v in lines[0].split(",")])
    U = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    return lam, U
