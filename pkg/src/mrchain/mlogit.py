"""The multivariate logistic link ``eta = C log(M p)`` under baseline coding."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Hashable, Sequence

import numpy as np
from scipy.linalg import block_diag

from mrchain.errors import ConvergenceError, DataError
from mrchain.tables import (
    CellLattice,
    ProbabilityTable,
    condition,
    loglinear_expand,
    marginalize,
    subsets,
)

ETA_LIMIT = 30.0
INVERSE_TOL = 1e-10
INVERSE_MAX_ITER = 200
MAX_HALVINGS = 20


def baseline_contrast(r: int) -> np.ndarray:
    """``(r-1) x r`` matrix of log-ratios against level 1."""
    return np.hstack([-np.ones((r - 1, 1)), np.eye(r - 1)])


def _kron_all(mats) -> np.ndarray:
    out = np.ones((1, 1))
    for m in mats:
        out = np.kron(out, m)
    return out


@dataclass(frozen=True, eq=False)
class LinkSpec:
    """Contrast and marginalization matrices for one block of responses.

    Margins are all non-empty subsets of the lattice variables, by size
    then position. Rows of ``M`` list the cells of each marginal table in
    turn; rows of ``C @ log(M p)`` list ``I*_A`` cell by cell within each
    margin, so ``eta`` has ``prod(r_v) - 1`` entries.
    """

    lattice: CellLattice
    margins: tuple[tuple[Hashable, ...], ...]
    C: np.ndarray
    M: np.ndarray

    @property
    def dim(self) -> int:
        return self.C.shape[0]

    @cached_property
    def slices(self) -> dict[tuple, slice]:
        out, start = {}, 0
        for a in self.margins:
            n = self.lattice.sub(a).star_size
            out[a] = slice(start, start + n)
            start += n
        return out

    @cached_property
    def row_labels(self) -> list[tuple[tuple, tuple[int, ...]]]:
        """``(margin, 1-based I*_A cell)`` for every entry of ``eta``."""
        return [(a, cell) for a in self.margins for cell in self.lattice.sub(a).star_cells()]

    def blocks(self, eta: np.ndarray) -> dict[tuple, np.ndarray]:
        eta = np.asarray(eta)
        return {a: eta[..., s] for a, s in self.slices.items()}


def build_link(lattice: CellLattice) -> LinkSpec:
    variables = lattice.variables
    margins = tuple(subsets(variables, min_size=1))
    m_blocks, c_blocks = [], []
    for a in margins:
        m_blocks.append(
            _kron_all(np.eye(r) if v in a else np.ones((1, r)) for v, r in zip(variables, lattice.levels))
        )
        c_blocks.append(_kron_all(baseline_contrast(r) for v, r in zip(variables, lattice.levels) if v in a))
    return LinkSpec(lattice, margins, block_diag(*c_blocks), np.vstack(m_blocks))


def _as_vector(link: LinkSpec, p) -> np.ndarray:
    if isinstance(p, ProbabilityTable):
        if p.lattice != link.lattice:
            p = marginalize(p, link.lattice.variables) if p.is_joint else p
            if p.lattice.levels != link.lattice.levels:
                raise DataError("table does not match the link lattice")
        return p.vector()
    arr = np.asarray(p, dtype=float)
    if arr.shape[-1] != link.lattice.size:
        arr = arr.reshape(arr.shape[: arr.ndim - len(link.lattice.shape)] + (link.lattice.size,))
    return arr


def eta_from_p(link: LinkSpec, p) -> np.ndarray:
    """``C log(M p)``; accepts a table, a cell vector, or a stack of vectors (last axis cells)."""
    vec = _as_vector(link, p)
    marg = vec @ link.M.T
    if np.any(marg <= 0):
        raise DataError("non-positive marginal probability")
    return np.log(marg) @ link.C.T


def link_jacobian(link: LinkSpec, p: np.ndarray) -> np.ndarray:
    """Derivative of ``C log(M p)`` with respect to ``p``."""
    return (link.C / (link.M @ p)) @ link.M


def _softmax(theta: np.ndarray) -> np.ndarray:
    z = np.concatenate([[0.0], theta])
    z = np.exp(z - z.max())
    return z / z.sum()


def _loglinear_start(link: LinkSpec, eta: np.ndarray) -> np.ndarray:
    # treat each eta block as the matching log-linear term; exact for the top margin
    lattice = link.lattice
    lam = np.zeros(lattice.shape)
    for a, block in link.blocks(eta).items():
        index = tuple(slice(1, None) if v in a else 0 for v in lattice.variables)
        lam[index] = block.reshape(tuple(r - 1 for r in lattice.levels_of(a)))
    for ax in range(lam.ndim):
        base = np.take(lam, [0], axis=ax)
        lam = np.concatenate([base, np.take(lam, range(1, lam.shape[ax]), axis=ax) + base], axis=ax)
    flat = lam.ravel()
    return flat[1:] - flat[0]


def invert_link(
    link: LinkSpec,
    eta: np.ndarray,
    tol: float = INVERSE_TOL,
    max_iter: int = INVERSE_MAX_ITER,
) -> tuple[np.ndarray, int]:
    """Solve ``C log(M p) = eta`` for a probability vector; returns ``(p, iterations)``.

    Damped Newton in ``theta`` with ``p = softmax(0, theta)``, so the
    simplex constraint never has to be enforced. Two starting points are
    tried: the log-linear guess and the uniform table.
    """
    eta = np.asarray(eta, dtype=float)
    if eta.shape != (link.dim,) or not np.all(np.isfinite(eta)):
        raise DataError(f"eta must be a finite vector of length {link.dim}")
    if np.abs(eta).max(initial=0.0) > ETA_LIMIT:
        raise ConvergenceError(f"|eta| exceeds {ETA_LIMIT}; rescale the parameters", module="mlogit")
    last = None
    for start in (_loglinear_start(link, eta), np.zeros(link.lattice.size - 1)):
        try:
            return _newton(link, eta, start, tol, max_iter)
        except ConvergenceError as exc:
            last = exc
    raise last


def _newton(link, eta, theta, tol, max_iter):
    def residual(th):
        p = _softmax(th)
        with np.errstate(divide="ignore"):
            return p, np.log(link.M @ p) @ link.C.T - eta

    p, res = residual(theta)
    norm = np.abs(res).max()
    for it in range(1, max_iter + 1):
        if norm < tol:
            return p, it - 1
        dp = np.diag(p) - np.outer(p, p)
        jac = link_jacobian(link, p) @ dp[:, 1:]
        try:
            step = np.linalg.solve(jac, -res)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(jac, -res, rcond=None)[0]
        big = np.abs(step).max()
        if big > 10.0:
            step *= 10.0 / big
        lam = 1.0
        for _ in range(MAX_HALVINGS):
            p_new, res_new = residual(theta + lam * step)
            norm_new = np.abs(res_new).max()
            if np.isfinite(norm_new) and norm_new < norm:
                break
            lam /= 2
        else:
            if not np.isfinite(norm_new):
                break
        theta = theta + lam * step
        p, res, norm = p_new, res_new, norm_new
    if norm < tol:
        return p, max_iter
    raise ConvergenceError(
        f"inverse link did not converge (residual {norm:.2e}); eta may lie outside the feasible region",
        module="mlogit",
        iterations=max_iter,
    )


def p_from_eta(link: LinkSpec, eta: np.ndarray, tol: float = INVERSE_TOL) -> ProbabilityTable:
    p, _ = invert_link(link, eta, tol=tol)
    return ProbabilityTable(link.lattice, p / p.sum())


def conditional_contrast(p: ProbabilityTable, a: Sequence[Hashable], b: Sequence[Hashable]) -> np.ndarray:
    """``eta^(A)(i*_A | i_B)`` for every class ``i_B``; shape ``levels(B) + (r-1 for A)``."""
    a, b = tuple(a), tuple(b)
    cond = condition(p, a, b)
    link = build_link(cond.lattice.sub(a))
    k = int(np.prod(cond.lattice.levels_of(b), dtype=np.int64)) if b else 1
    top = link.slices[a]
    eta = eta_from_p(link, cond.values.reshape(k, -1))[:, top]
    return eta.reshape(cond.lattice.levels_of(b) + tuple(r - 1 for r in cond.lattice.levels_of(a)))


def lemma2_betas(p_joint: ProbabilityTable, a: Sequence[Hashable], b_full: Sequence[Hashable]) -> dict:
    """Log-linear terms ``lambda_{A u b}`` of the margin ``A u B`` for each ``b <= B``.

    Each value has axes ``A`` (levels 2..r) then ``b`` (levels 2..r).
    Summing them over ``b`` reproduces the conditional contrasts
    ``eta^(A)(. | i_B)``, with terms dropped when an index of ``i_b`` is 1.
    """
    a, b_full = tuple(a), tuple(b_full)
    if set(a) & set(b_full):
        raise DataError("A and B must be disjoint")
    expansion = loglinear_expand(marginalize(p_joint, a + b_full))
    return {b: expansion.term(a + b) for b in subsets(b_full)}
