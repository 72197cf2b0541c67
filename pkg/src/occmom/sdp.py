"""Equality-constrained semidefinite programs and a primal-dual interior-point solver.

The program solved here is::

    minimize    c'v + offset
    subject to  E v = d
                S_b(v) = F0_b + sum_i v_i F_ib  >= 0   for every block b

with dual::

    maximize    d'lam - sum_b <F0_b, Z_b> + offset
    subject to  E'lam + sum_b F_b^*(Z_b) = c,   Z_b >= 0

which is the shape of a truncated moment relaxation (``v`` holds moments,
``Z_b`` are Gram matrices of the SOS multipliers, ``lam`` the coefficients of
the polynomial certificate).

The solver is an infeasible-start path-following method with Nesterov-Todd
scaling and a Mehrotra predictor-corrector step. Linear algebra is dense per
block; the block coefficient maps are kept as sparse matrices.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


@dataclass
class PSDBlock:
    """Affine matrix map ``v -> F0 + sum_i v_i F_i`` stored as ``vec(F_i)`` columns."""

    size: int
    F: sp.csc_matrix  # shape (size*size, N), row-major vec
    F0: np.ndarray | None = None
    label: str = ""

    def __post_init__(self):
        self.F = sp.csc_matrix(self.F)
        if self.F0 is None:
            self.F0 = np.zeros((self.size, self.size))
        self.F0 = np.asarray(self.F0, dtype=float)

    def evaluate(self, v: np.ndarray) -> np.ndarray:
        mat = self.F0 + (self.F @ v).reshape(self.size, self.size)
        return 0.5 * (mat + mat.T)

    def linear(self, v: np.ndarray) -> np.ndarray:
        mat = (self.F @ v).reshape(self.size, self.size)
        return 0.5 * (mat + mat.T)

    def adjoint(self, Z: np.ndarray) -> np.ndarray:
        return self.F.T @ Z.ravel()

    @classmethod
    def from_dense(cls, mats, F0=None, label: str = "") -> PSDBlock:
        """Build from a dense stack ``mats[i] = F_i`` of shape ``(N, n, n)``."""
        mats = np.asarray(mats, dtype=float)
        N, n, _ = mats.shape
        return cls(n, sp.csc_matrix(mats.reshape(N, n * n).T), F0, label)


@dataclass
class ConicProgram:
    c: np.ndarray
    E: np.ndarray
    d: np.ndarray
    blocks: list[PSDBlock]
    offset: float = 0.0

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        N = self.c.size
        E = self.E.toarray() if sp.issparse(self.E) else np.asarray(self.E, dtype=float)
        self.E = E.reshape(-1, N)
        self.d = np.asarray(self.d, dtype=float).ravel()
        if self.E.shape[0] != self.d.size:
            raise ValueError("E and d have inconsistent row counts")
        for b in self.blocks:
            if b.F.shape != (b.size * b.size, N):
                raise ValueError(f"block {b.label!r} has shape {b.F.shape}, expected {(b.size * b.size, N)}")

    @property
    def n_vars(self) -> int:
        return self.c.size

    def objective(self, v) -> float:
        return float(self.c @ v) + self.offset

    def dual_objective(self, lam, Z) -> float:
        return float(self.d @ lam) - sum(float(np.sum(b.F0 * z)) for b, z in zip(self.blocks, Z)) + self.offset


@dataclass
class SolverOptions:
    tol_gap: float = 1e-8
    tol_feas: float = 1e-8
    max_iter: int = 200
    presolve_tol: float = 1e-10
    verbose: bool = False


@dataclass
class ConicSolution:
    status: str
    v: np.ndarray
    lam: np.ndarray
    Z: list[np.ndarray]
    primal_objective: float
    dual_objective: float
    iterations: int = 0
    info: dict = field(default_factory=dict)

    @property
    def gap(self) -> float:
        return abs(self.primal_objective - self.dual_objective)

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def residuals(p: ConicProgram, sol: ConicSolution) -> dict:
    """Recompute feasibility and optimality measures from scratch."""
    v, lam = sol.v, sol.lam
    primal_eq = float(np.linalg.norm(p.E @ v - p.d)) if p.d.size else 0.0
    dual = p.c - p.E.T @ lam
    for b, z in zip(p.blocks, sol.Z):
        dual = dual - b.adjoint(z)
    min_eig_S = [float(np.linalg.eigvalsh(b.evaluate(v))[0]) for b in p.blocks]
    min_eig_Z = [float(np.linalg.eigvalsh(0.5 * (z + z.T))[0]) for z in sol.Z]
    pobj = p.objective(v)
    dobj = p.dual_objective(lam, sol.Z)
    return {
        "primal_eq": primal_eq,
        "dual_eq": float(np.linalg.norm(dual)),
        "min_eig": min_eig_S,
        "min_eig_dual": min_eig_Z,
        "primal_objective": pobj,
        "dual_objective": dobj,
        "gap": abs(pobj - dobj),
        "rel_gap": abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj)),
    }


def _presolve(E: np.ndarray, d: np.ndarray, tol: float):
    """Rank-revealing QR of ``E'``.

    Returns kept row indices, an orthonormal basis ``Q`` of their row space,
    the triangular factor ``R`` (``E[keep]' = Q R``), an orthonormal nullspace
    basis, and whether the dropped rows are consistent.
    """
    p, N = E.shape
    if p == 0:
        return np.arange(0), np.zeros((N, 0)), np.zeros((0, 0)), np.eye(N), True
    _, R0, piv = sla.qr(E.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R0))
    rank = int(np.sum(diag > tol * diag[0])) if diag.size and diag[0] > 0 else 0
    keep = np.sort(piv[:rank])
    Qfull, R = sla.qr(E[keep].T, mode="full")
    Q, R = Qfull[:, :rank], R[:rank, :rank]
    null = Qfull[:, rank:]
    consistent = True
    if rank < p:
        v_ls = Q @ sla.solve_triangular(R, d[keep], trans="T") if rank else np.zeros(N)
        res = E @ v_ls - d
        consistent = np.linalg.norm(res) <= 1e-8 * (1.0 + np.linalg.norm(d))
    return keep, Q, R, null, consistent


class _Scaling:
    """Nesterov-Todd scaling data for one block."""

    def __init__(self, X: np.ndarray, S: np.ndarray):
        Lx = np.linalg.cholesky(X)
        Ls = np.linalg.cholesky(S)
        U, sig, Qt = np.linalg.svd(Ls.T @ Lx)
        self.Lx = Lx
        self.Q = Qt.T
        self.lam = sig
        self.G = Lx @ self.Q / np.sqrt(sig)[None, :]
        self.W = self.G @ self.G.T
        self.W = 0.5 * (self.W + self.W.T)

    def scale_X(self, dX):
        # G^{-1} dX G^{-T}, with G^{-1} = diag(sqrt(sig)) Q' Lx^{-1}
        A = sla.solve_triangular(self.Lx, dX, lower=True)
        A = sla.solve_triangular(self.Lx, A.T, lower=True).T
        A = self.Q.T @ A @ self.Q
        s = np.sqrt(self.lam)
        return s[:, None] * A * s[None, :]

    def scale_S(self, dS):
        return self.G.T @ dS @ self.G


def _max_step(V: np.ndarray, dV: np.ndarray) -> float:
    """Largest alpha with diag(V) + alpha dV >= 0, V positive diagonal."""
    s = 1.0 / np.sqrt(V)
    eig = np.linalg.eigvalsh(s[:, None] * dV * s[None, :])
    lo = eig[0]
    return np.inf if lo >= 0 else -1.0 / lo


def _schur(blocks, scalings, N, chunk=64):
    M = np.zeros((N, N))
    for b, sc in zip(blocks, scalings):
        n = b.size
        used = np.flatnonzero(np.diff(b.F.indptr))
        W = sc.W
        for start in range(0, used.size, chunk):
            cols = used[start:start + chunk]
            A = b.F[:, cols].toarray().T.reshape(cols.size, n, n)
            T = W @ A @ W
            M[:, cols] += b.F.T @ T.reshape(cols.size, n * n).T
    return 0.5 * (M + M.T)


def _factor(M):
    scale = max(np.max(np.abs(np.diag(M))), 1e-300)
    reg = 0.0
    for _ in range(8):
        try:
            return sla.cho_factor(M + reg * scale * np.eye(M.shape[0]), lower=True)
        except np.linalg.LinAlgError:
            reg = 1e-14 if reg == 0.0 else reg * 100
    raise np.linalg.LinAlgError("Schur complement not positive definite")


def solve(p: ConicProgram, opts: SolverOptions | None = None) -> ConicSolution:
    """Solve ``p`` by a Nesterov-Todd predictor-corrector interior-point method.

    Equalities are eliminated up front: iterates stay on ``v0 + null(E)``, and
    the equality multipliers are recovered by least squares at the end.
    """
    opts = opts or SolverOptions()
    if not p.blocks:
        raise SolverError("program has no PSD blocks")
    N = p.n_vars
    keep, Q, R, Nb, consistent = _presolve(p.E, p.d, opts.presolve_tol)
    if not consistent:
        return ConicSolution("infeasible", np.zeros(N), np.zeros(p.d.size),
                             [np.zeros((b.size, b.size)) for b in p.blocks], np.inf, np.inf,
                             info={"reason": "inconsistent equality constraints"})
    d = p.d[keep]
    blocks = p.blocks
    c = p.c
    n_total = sum(b.size for b in blocks)
    v0 = Q @ sla.solve_triangular(R, d, trans="T") if keep.size else np.zeros(N)

    def project(g):
        # component of g orthogonal to the row space of E
        return Nb @ (Nb.T @ g)

    # initial point
    Fnorm = np.zeros(N)
    for b in blocks:
        Fnorm = np.sqrt(Fnorm ** 2 + np.asarray(b.F.multiply(b.F).sum(axis=0)).ravel())
    X, S = [], []
    for b in blocks:
        n = b.size
        xi = max(10.0, np.sqrt(n), n * np.max((1 + np.abs(c)) / (1 + Fnorm)))
        eta = max(10.0, np.sqrt(n), float(np.max(Fnorm)), float(np.linalg.norm(b.F0)))
        X.append(xi * np.eye(n))
        S.append(eta * np.eye(n))
    v = v0.copy()

    norm_c = 1.0 + np.linalg.norm(c)
    norm_d = 1.0 + np.linalg.norm(d) + max(np.linalg.norm(b.F0) for b in blocks)
    status = "max_iter"
    history = []
    it = 0
    best = None

    def lam_of(X):
        g = c.copy()
        for b, x in zip(blocks, X):
            g -= b.adjoint(x)
        return sla.solve_triangular(R, Q.T @ g) if keep.size else np.zeros(0), g

    for it in range(1, opts.max_iter + 1):
        RS = [b.evaluate(v) - s for b, s in zip(blocks, S)]
        lam, g = lam_of(X)
        rd = project(g)
        mu = sum(float(np.sum(x * s)) for x, s in zip(X, S)) / n_total
        pobj = float(c @ v) + p.offset
        dobj = float(d @ lam) - sum(float(np.sum(b.F0 * x)) for b, x in zip(blocks, X)) + p.offset
        pinf = max(np.linalg.norm(r) for r in RS) / norm_d
        dinf = np.linalg.norm(rd) / norm_c
        rel_gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        history.append((pobj, dobj, pinf, dinf, rel_gap, mu))
        if opts.verbose:
            log.info("it %3d pobj %+.9e dobj %+.9e pinf %.1e dinf %.1e gap %.1e", it, pobj, dobj, pinf, dinf, rel_gap)
        merit = max(pinf, dinf, rel_gap)
        if best is None or merit < best[0]:
            best = (merit, v.copy(), [x.copy() for x in X], it)
        if pinf <= opts.tol_feas and dinf <= opts.tol_feas and rel_gap <= opts.tol_gap:
            status = "optimal"
            break
        # infeasibility certificates (normalized rays)
        dray = dobj - p.offset
        if dray > 1e8 * norm_c and np.linalg.norm(c - rd) <= 1e-8 * dray:
            status = "infeasible"
            break
        pray = -(pobj - p.offset)
        if pray > 1e8 * norm_d and pinf * norm_d <= 1e-8 * pray:
            status = "unbounded"
            break

        try:
            scalings = [_Scaling(x, s) for x, s in zip(X, S)]
            M = Nb.T @ _schur(blocks, scalings, N) @ Nb
            Mf = _factor(0.5 * (M + M.T))
        except (np.linalg.LinAlgError, ValueError):
            status = "numerical"
            break

        def direction(Rc_list):
            # reduced system  (N' M N) dxi = N' h,  h = F*(G Rc G' - W RS W) - rd
            h = -rd.copy()
            for b, sc, Rc, Rs in zip(blocks, scalings, Rc_list, RS):
                h += b.adjoint(sc.G @ Rc @ sc.G.T - sc.W @ Rs @ sc.W)
            dv = Nb @ sla.cho_solve(Mf, Nb.T @ h)
            dS, dX = [], []
            for b, sc, Rc, Rs in zip(blocks, scalings, Rc_list, RS):
                ds = b.linear(dv) + Rs
                dx = sc.G @ Rc @ sc.G.T - sc.W @ ds @ sc.W
                dS.append(0.5 * (ds + ds.T))
                dX.append(0.5 * (dx + dx.T))
            return dv, dS, dX

        def steps(dS, dX):
            ap, ad = np.inf, np.inf
            for sc, ds, dx in zip(scalings, dS, dX):
                ap = min(ap, _max_step(sc.lam, sc.scale_S(ds)))
                ad = min(ad, _max_step(sc.lam, sc.scale_X(dx)))
            return ap, ad

        # predictor
        dv, dS, dX = direction([np.diag(-sc.lam) for sc in scalings])
        ap, ad = steps(dS, dX)
        ap, ad = min(1.0, ap), min(1.0, ad)
        mu_aff = sum(float(np.sum((x + ad * dx) * (s + ap * ds))) for x, s, dx, ds in zip(X, S, dX, dS)) / n_total
        sigma = min(1.0, (mu_aff / mu) ** 3) if mu > 0 else 0.0
        # corrector
        Rc_list = []
        for sc, dx, ds in zip(scalings, dX, dS):
            lam_s = sc.lam
            dxs = sc.scale_X(dx)
            dss = sc.scale_S(ds)
            Rm = 2 * sigma * mu * np.eye(lam_s.size) - 2 * np.diag(lam_s ** 2) - (dxs @ dss + dss @ dxs)
            Rc_list.append(Rm / (lam_s[:, None] + lam_s[None, :]))
        dv, dS, dX = direction(Rc_list)
        ap, ad = steps(dS, dX)
        gamma = 0.9 + 0.09 * min(min(1.0, ap), min(1.0, ad))
        ap = min(1.0, gamma * ap)
        ad = min(1.0, gamma * ad)
        v = v + ap * dv
        S = [0.5 * (s + ap * ds + (s + ap * ds).T) for s, ds in zip(S, dS)]
        X = [0.5 * (x + ad * dx + (x + ad * dx).T) for x, dx in zip(X, dX)]
        if max(ap, ad) < 1e-10:
            status = "numerical"
            break

    if status in ("numerical", "max_iter") and best is not None:
        _, v, X, _ = best
    lam, _ = lam_of(X)
    lam_full = np.zeros(p.d.size)
    lam_full[keep] = lam
    return ConicSolution(status, v, lam_full, X, p.objective(v), p.dual_objective(lam_full, X), it,
                         info={"history": history, "kept_rows": keep})


# ---------------------------------------------------------------------------
# SDPA sparse format bridge
#
# SDPA states a program as ``min c'x  s.t.  sum_i F_i x_i - F_0 >= 0`` over a
# block-diagonal structure (negative block sizes mark diagonal/LP blocks).
# PSD blocks are written as they are (with ``F_0 = -F0``); the equalities
# ``E v = d`` become one diagonal block holding ``E v - d >= 0`` and
# ``d - E v >= 0``. The constant ``offset`` travels in a comment line.


def _fmt(x: float) -> str:
    return repr(float(x))


def export_sdpa(p: ConicProgram, path=None) -> str:
    """Write ``p`` in SDPA sparse format; returns the text (and writes ``path`` if given)."""
    if not p.blocks and not p.d.size:
        raise ValueError("program has no constraint blocks")
    if any(b.size == 0 for b in p.blocks):
        raise ValueError("program contains an empty block")
    N = p.n_vars
    if N == 0:
        raise ValueError("program has no variables")
    nrow = p.d.size
    struct = [b.size for b in p.blocks] + ([-2 * nrow] if nrow else [])
    lines = [
        '"exported conic program',
        f"* offset = {_fmt(p.offset)}",
        str(N),
        str(len(struct)),
        " ".join(str(s) for s in struct),
        " ".join(_fmt(ci) for ci in p.c),
    ]
    for bno, blk in enumerate(p.blocks, start=1):
        n = blk.size
        F0 = 0.5 * (blk.F0 + blk.F0.T)
        for i, j in zip(*np.nonzero(np.triu(F0))):
            lines.append(f"0 {bno} {i + 1} {j + 1} {_fmt(-F0[i, j])}")
        Fc = blk.F.tocsc()
        for col in range(N):
            start, end = Fc.indptr[col], Fc.indptr[col + 1]
            if start == end:
                continue
            mat = np.zeros((n, n))
            np.add.at(mat, np.divmod(Fc.indices[start:end], n), Fc.data[start:end])
            mat = 0.5 * (mat + mat.T)
            for i, j in zip(*np.nonzero(np.triu(mat))):
                lines.append(f"{col + 1} {bno} {i + 1} {j + 1} {_fmt(mat[i, j])}")
    if nrow:
        bno = len(p.blocks) + 1
        for k in range(nrow):
            if p.d[k]:
                lines.append(f"0 {bno} {k + 1} {k + 1} {_fmt(p.d[k])}")
                lines.append(f"0 {bno} {nrow + k + 1} {nrow + k + 1} {_fmt(-p.d[k])}")
        for k, col in zip(*np.nonzero(p.E)):
            lines.append(f"{col + 1} {bno} {k + 1} {k + 1} {_fmt(p.E[k, col])}")
            lines.append(f"{col + 1} {bno} {nrow + k + 1} {nrow + k + 1} {_fmt(-p.E[k, col])}")
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def write_solution_sdpa(p: ConicProgram, sol: ConicSolution, path=None) -> str:
    """Write ``sol`` in the layout of an SDPA result file (``xVec``, ``xMat``, ``yMat``)."""
    nrow = p.d.size

    def mat_text(m: np.ndarray) -> str:
        rows = ",".join("{" + ",".join(_fmt(v) for v in row) + "}" for row in m)
        return "{" + rows + "}"

    def diag_text(vec: np.ndarray) -> str:
        return "{" + ",".join(_fmt(v) for v in vec) + "}"

    slack = [b.evaluate(sol.v) for b in p.blocks]
    Y = [0.5 * (z + z.T) for z in sol.Z]
    lp_slack = np.concatenate([p.E @ sol.v - p.d, p.d - p.E @ sol.v]) if nrow else None
    lam = sol.lam
    lp_dual = np.concatenate([np.maximum(lam, 0.0), np.maximum(-lam, 0.0)]) if nrow else None
    x_blocks = [mat_text(s) for s in slack] + ([diag_text(lp_slack)] if nrow else [])
    y_blocks = [mat_text(y) for y in Y] + ([diag_text(lp_dual)] if nrow else [])
    pobj = sol.primal_objective - p.offset
    dobj = sol.dual_objective - p.offset
    lines = [
        f"phase.value = {'pdOPT' if sol.status == 'optimal' else 'pdFEAS'}",
        f"   Iteration = {sol.iterations}",
        f"objValPrimal = {_fmt(pobj)}",
        f"objValDual   = {_fmt(dobj)}",
        "xVec = ",
        diag_text(sol.v),
        "xMat = ",
        "{",
        *x_blocks,
        "}",
        "yMat = ",
        "{",
        *y_blocks,
        "}",
    ]
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def _numbers(text: str) -> list[float]:
    import re

    return [float(tok) for tok in re.findall(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?|[-+]?inf|nan", text)]


def _section(text: str, key: str, next_keys: list[str]) -> str:
    start = text.find(key)
    if start < 0:
        raise ValueError(f"malformed SDPA solution: missing {key!r}")
    start = text.index("=", start) + 1
    end = len(text)
    for nk in next_keys:
        pos = text.find(nk, start)
        if pos >= 0:
            end = min(end, pos)
    return text[start:end]


def import_solution_sdpa(path_or_text, p: ConicProgram) -> ConicSolution:
    """Read an SDPA result file for the program ``p`` written by :func:`export_sdpa`.

    ``xVec`` gives ``v``; ``yMat`` gives the PSD multipliers ``Z_b`` and,
    through its diagonal equality block, ``lam = y_plus - y_minus``.
    """
    text = path_or_text
    if "\n" not in str(path_or_text) and "xVec" not in str(path_or_text):
        with open(path_or_text) as fh:
            text = fh.read()
    try:
        x = np.array(_numbers(_section(text, "xVec", ["xMat", "yMat"])))
        ymat = _numbers(_section(text, "yMat", ["xMat", "xVec", "main loop", "total time"]))
        status_line = text[text.find("phase.value"):].split("\n", 1)[0] if "phase.value" in text else ""
    except ValueError:
        raise
    if x.size != p.n_vars:
        raise ValueError(f"malformed SDPA solution: xVec has {x.size} entries, expected {p.n_vars}")
    Z = []
    pos = 0
    for b in p.blocks:
        n2 = b.size * b.size
        if pos + n2 > len(ymat):
            raise ValueError("malformed SDPA solution: yMat too short")
        Z.append(np.array(ymat[pos:pos + n2]).reshape(b.size, b.size))
        pos += n2
    nrow = p.d.size
    if nrow:
        if pos + 2 * nrow > len(ymat):
            raise ValueError("malformed SDPA solution: yMat equality block too short")
        diag = np.array(ymat[pos:pos + 2 * nrow])
        lam = diag[:nrow] - diag[nrow:]
        pos += 2 * nrow
    else:
        lam = np.zeros(0)
    if pos != len(ymat):
        raise ValueError("malformed SDPA solution: unexpected yMat size")
    status = "optimal" if "pdOPT" in status_line else ("numerical" if status_line else "optimal")
    if "pINF" in status_line or "dUNBD" in status_line:
        status = "infeasible"
    elif "dINF" in status_line or "pUNBD" in status_line:
        status = "unbounded"
    return ConicSolution(status, x, lam, Z, p.objective(x), p.dual_objective(lam, Z), info={"source": "sdpa"})


def solve_external(p: ConicProgram, executable: str, workdir=None) -> ConicSolution:
    """Solve ``p`` with an SDPA-compatible executable called as ``exe input output``."""
    import os
    import subprocess
    import tempfile

    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        inp = os.path.join(tmp, "problem.dat-s")
        out = os.path.join(tmp, "problem.out")
        export_sdpa(p, inp)
        proc = subprocess.run([executable, inp, out], capture_output=True, text=True)
        if proc.returncode != 0 or not os.path.exists(out):
            raise SolverError(f"external solver failed: {proc.stderr.strip() or proc.stdout.strip()}")
        with open(out) as fh:
            return import_solution_sdpa(fh.read(), p)
