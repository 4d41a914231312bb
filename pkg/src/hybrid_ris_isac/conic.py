"""Real standard-form semidefinite-program layer.

An :class:`SdpProblem` holds PSD matrix blocks (addressed through their
upper triangles), one nonnegative-orthant vector, one free vector, a
linear objective (maximized), and a list of linear constraints over the
declared entries. :func:`solve_sdp` drives an ecosystem conic backend
(Clarabel interior-point for small blocks, SCS splitting for large ones)
and :func:`kkt_residuals` re-derives optimality residuals from the raw
problem data so that trust never rests on a backend's self-report.

Complex Hermitian PSD variables are supported through the standard real
embedding H -> [[Re H, -Im H], [Im H, Re H]]. All functionals built by
:class:`HermitianBlockHandle` are invariant under conjugation by
J = [[0, -I], [I, 0]], so the embedded block needs no structural
equality constraints: any solution can be J-symmetrized (and is, on
extraction) without changing objective or feasibility.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

_SQRT2 = np.sqrt(2.0)


def tri_dim(n: int) -> int:
    return n * (n + 1) // 2


@lru_cache(maxsize=None)
def _upper_rowmajor_ij(n: int):
    """(i, j) arrays of the upper triangle in row-major order."""
    i, j = np.triu_indices(n)
    return i.astype(np.int64), j.astype(np.int64)


@lru_cache(maxsize=None)
def _rowmajor_to_colmajor(n: int) -> np.ndarray:
    """Permutation p such that colmajor_pos = p[rowmajor_pos]."""
    i, j = _upper_rowmajor_ij(n)
    return (j * (j + 1)) // 2 + i


def herm_to_real(H: np.ndarray) -> np.ndarray:
    """Embed a complex Hermitian matrix as [[Re, -Im], [Im, Re]].

    H is PSD iff the embedding is PSD; the embedding doubles the trace and
    real inner products pick up a factor 2 (compensated by the coefficient
    builders in :class:`HermitianBlockHandle`).
    """
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError("H must be square")
    asym = np.max(np.abs(H - H.conj().T)) if H.size else 0.0
    if asym > 1e-10 * max(1.0, float(np.max(np.abs(H))) if H.size else 1.0):
        raise ValueError(f"H is not Hermitian (asymmetry {asym:.3e})")
    return np.block([[H.real, -H.imag], [H.imag, H.real]])


@dataclass
class SolveOptions:
    tol: float = 1e-7
    max_iter: int | None = None      # backend default: 200 IP / 1e5 first-order
    backend: str = "auto"            # 'auto' | 'clarabel' | 'scs'
    verbose: bool = False
    warm_start: tuple | None = None  # raw (x, y, s) from a previous solve
    check_tol_factor: float = 2.0    # backend is asked for tol / this factor


class SdpProblem:
    """Container for one real conic program in entry-indexed form.

    Variable entries get global integer ids: first every PSD block's upper
    triangle (row-major), then the nonnegative vector, then the free
    vector. Constraints and the objective are lists of (entry id,
    coefficient) pairs; coefficients multiply the *matrix entry value*
    X[i, j] (each off-diagonal pair addressed once through i <= j).
    """

    def __init__(self):
        self.psd_orders: list[int] = []
        self.nonneg_dim = 0
        self.free_dim = 0
        self._psd_bases: list[int] = []
        self._next_id = 0
        self._rows: list[tuple[np.ndarray, np.ndarray]] = []
        self._senses: list[str] = []
        self._rhs: list[float] = []
        self._names: list[str | None] = []
        self._obj_idx = np.zeros(0, dtype=np.int64)
        self._obj_coef = np.zeros(0)
        self._frozen_vars = False
        self._cache: dict = {}

    # ---- variable declaration -------------------------------------------

    def add_psd_block(self, order: int) -> int:
        if self._frozen_vars:
            raise ValueError("declare all variables before adding constraints")
        if order < 1:
            raise ValueError("PSD block order must be >= 1")
        self.psd_orders.append(order)
        self._psd_bases.append(self._next_id)
        self._next_id += tri_dim(order)
        return len(self.psd_orders) - 1

    def add_nonneg(self, dim: int) -> int:
        if self._frozen_vars:
            raise ValueError("declare all variables before adding constraints")
        if self.nonneg_dim:
            raise ValueError("the nonnegative vector is declared in one shot")
        self._nonneg_base = self._next_id
        self.nonneg_dim = dim
        self._next_id += dim
        return self._nonneg_base

    def add_free(self, dim: int) -> int:
        if self._frozen_vars:
            raise ValueError("declare all variables before adding constraints")
        if self.free_dim:
            raise ValueError("the free vector is declared in one shot")
        self._free_base = self._next_id
        self.free_dim = dim
        self._next_id += dim
        return self._free_base

    @property
    def num_entries(self) -> int:
        return self._next_id

    def psd_entry(self, block: int, i: int, j: int) -> int:
        """Entry id of X[i, j] in a PSD block; (i, j) canonicalized to i <= j."""
        n = self.psd_orders[block]
        if not (0 <= i < n and 0 <= j < n):
            raise IndexError("PSD entry out of range")
        if i > j:
            i, j = j, i
        return self._psd_bases[block] + i * n - (i * (i - 1)) // 2 + (j - i)

    # ---- constraints and objective --------------------------------------

    def add_constraint(self, idx, coef, sense: str, rhs: float,
                       name: str | None = None) -> int:
        if sense not in ("<=", ">=", "=="):
            raise ValueError(f"unknown sense {sense!r}")
        idx = np.asarray(idx, dtype=np.int64)
        coef = np.asarray(coef, dtype=float)
        if idx.shape != coef.shape:
            raise ValueError("idx and coef must align")
        if idx.size and (idx.min() < 0 or idx.max() >= self._next_id):
            raise ValueError("constraint references undeclared entries")
        self._frozen_vars = True
        self._rows.append((idx, coef))
        self._senses.append(sense)
        self._rhs.append(float(rhs))
        self._names.append(name)
        self._cache.clear()
        return len(self._rows) - 1

    def set_objective(self, idx, coef) -> None:
        """Linear objective (maximized). Replaces any previous objective."""
        self._obj_idx = np.asarray(idx, dtype=np.int64)
        self._obj_coef = np.asarray(coef, dtype=float)
        for key in [k for k in self._cache if k[0] == "q"]:
            self._cache.pop(key)

    @property
    def num_constraints(self) -> int:
        return len(self._rows)

    def constraint(self, r: int):
        return self._rows[r], self._senses[r], self._rhs[r], self._names[r]

    # ---- entry metadata ---------------------------------------------------

    def _entry_maps(self, backend: str):
        """Per-entry solver column index and svec scale factor."""
        key = ("maps", backend)
        if key in self._cache:
            return self._cache[key]
        col = np.arange(self._next_id, dtype=np.int64)
        scale = np.ones(self._next_id)
        for b, n in enumerate(self.psd_orders):
            base = self._psd_bases[b]
            t = tri_dim(n)
            i, j = _upper_rowmajor_ij(n)
            scale[base:base + t] = np.where(i == j, 1.0, 1.0 / _SQRT2)
            if backend == "clarabel":
                col[base:base + t] = base + _rowmajor_to_colmajor(n)
        self._cache[key] = (col, scale)
        return col, scale

    # ---- assembly to  min q'x  s.t.  Ax + s = b,  s in K ------------------

    def assemble(self, backend: str):
        """Build (A, b, q, cone sizes, row order) for a backend.

        Row order: equalities (original order), inequalities (original
        order, '>=' negated), nonnegative-orthant memberships, PSD block
        memberships. Pure function of the stored raw data.
        """
        key = ("asm", backend)
        qkey = ("q", backend)
        if key in self._cache:
            A, b, cones, eq_rows, ineq_rows = self._cache[key]
            if qkey not in self._cache:
                self._cache[qkey] = self._objective_vector(backend)
            return A, b, self._cache[qkey], cones, eq_rows, ineq_rows
        col_map, scale = self._entry_maps(backend)
        senses = np.array(self._senses)
        eq_rows = np.flatnonzero(senses == "==")
        ineq_rows = np.flatnonzero(senses != "==")
        n_eq, n_ineq = len(eq_rows), len(ineq_rows)
        psd_tris = [tri_dim(n) for n in self.psd_orders]
        m = n_eq + n_ineq + self.nonneg_dim + sum(psd_tris)

        data, rows, cols = [], [], []
        b = np.zeros(m)
        for pos, r in enumerate(eq_rows):
            idx, coef = self._rows[r]
            rows.append(np.full(idx.size, pos, dtype=np.int64))
            cols.append(col_map[idx])
            data.append(coef * scale[idx])
            b[pos] = self._rhs[r]
        for pos, r in enumerate(ineq_rows):
            sgn = 1.0 if self._senses[r] == "<=" else -1.0
            idx, coef = self._rows[r]
            rows.append(np.full(idx.size, n_eq + pos, dtype=np.int64))
            cols.append(col_map[idx])
            data.append(sgn * coef * scale[idx])
            b[n_eq + pos] = sgn * self._rhs[r]
        base_row = n_eq + n_ineq
        if self.nonneg_dim:
            nn0 = self._nonneg_base
            rows.append(base_row + np.arange(self.nonneg_dim, dtype=np.int64))
            cols.append(col_map[nn0 + np.arange(self.nonneg_dim)])
            data.append(np.full(self.nonneg_dim, -1.0))
            base_row += self.nonneg_dim
        for blk, t in enumerate(psd_tris):
            cstart = self._psd_bases[blk]
            rows.append(base_row + np.arange(t, dtype=np.int64))
            cols.append(cstart + np.arange(t, dtype=np.int64))
            data.append(np.full(t, -1.0))
            base_row += t

        A = sp.csc_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(m, self._next_id),
        )
        cones = dict(n_eq=n_eq, n_ineq=n_ineq, nonneg=self.nonneg_dim,
                     psd=list(self.psd_orders))
        self._cache[key] = (A, b, cones, eq_rows, ineq_rows)
        q = self._objective_vector(backend)
        self._cache[qkey] = q
        return A, b, q, cones, eq_rows, ineq_rows

    def _objective_vector(self, backend: str) -> np.ndarray:
        col_map, scale = self._entry_maps(backend)
        q = np.zeros(self._next_id)
        np.add.at(q, col_map[self._obj_idx],
                  -self._obj_coef * scale[self._obj_idx])
        return q

    def dump(self) -> str:
        """Sparse triplet text listing (objective plus one line per constraint)."""
        lines = [f"VARS psd={self.psd_orders} nonneg={self.nonneg_dim} "
                 f"free={self.free_dim}"]
        obj = " ".join(f"{i}:{c:.17g}" for i, c in
                       zip(self._obj_idx, self._obj_coef))
        lines.append(f"MAX {obj}")
        for r, ((idx, coef), sense, rhs) in enumerate(
            zip(self._rows, self._senses, self._rhs)
        ):
            body = " ".join(f"{i}:{c:.17g}" for i, c in zip(idx, coef))
            lines.append(f"CON {r} {sense} {rhs:.17g} {body}")
        return "\n".join(lines) + "\n"


@dataclass
class SdpSolution:
    """Primal/dual outcome of one solve in problem-entry coordinates."""

    status: str                       # optimal | infeasible | unbounded | numerical_failure
    objective: float
    psd_values: list                  # symmetric (n, n) arrays per block
    nonneg_values: np.ndarray
    free_values: np.ndarray
    row_duals: np.ndarray             # per original constraint (canonical sense)
    psd_duals: list
    nonneg_duals: np.ndarray
    residuals: dict
    backend: str
    info: dict = field(default_factory=dict)
    raw: tuple | None = None          # (x, y, s) in backend coordinates

    def entry_values(self, problem: SdpProblem) -> np.ndarray:
        vals = np.zeros(problem.num_entries)
        for b, X in enumerate(self.psd_values):
            n = problem.psd_orders[b]
            i, j = _upper_rowmajor_ij(n)
            base = problem._psd_bases[b]
            vals[base:base + tri_dim(n)] = X[i, j]
        if problem.nonneg_dim:
            nb = problem._nonneg_base
            vals[nb:nb + problem.nonneg_dim] = self.nonneg_values
        if problem.free_dim:
            fb = problem._free_base
            vals[fb:fb + problem.free_dim] = self.free_values
        return vals


def _svec_to_mat(v: np.ndarray, n: int, order: str) -> np.ndarray:
    X = np.zeros((n, n))
    i, j = _upper_rowmajor_ij(n)
    if order == "colmajor":
        v = v[_rowmajor_to_colmajor(n)]
    vals = np.where(i == j, v, v / _SQRT2)
    X[i, j] = vals
    X[j, i] = vals
    return X


def _extract(problem: SdpProblem, backend: str, x, y, s, status, info,
             tol: float) -> SdpSolution:
    A, b, q, cones, eq_rows, ineq_rows = problem.assemble(backend)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    svec_order = "colmajor" if backend == "clarabel" else "rowmajor"

    psd_values, psd_duals = [], []
    n_eq, n_ineq, nn = cones["n_eq"], cones["n_ineq"], cones["nonneg"]
    row0 = n_eq + n_ineq + nn
    for blk, n in enumerate(problem.psd_orders):
        t = tri_dim(n)
        base = problem._psd_bases[blk]
        psd_values.append(_svec_to_mat(x[base:base + t], n, svec_order))
        psd_duals.append(_svec_to_mat(y[row0:row0 + t], n, svec_order))
        row0 += t
    nonneg_values = (x[problem._nonneg_base:problem._nonneg_base + nn].copy()
                     if nn else np.zeros(0))
    free_values = (x[problem._free_base:problem._free_base + problem.free_dim].copy()
                   if problem.free_dim else np.zeros(0))
    nonneg_duals = y[n_eq + n_ineq:n_eq + n_ineq + nn].copy() if nn else np.zeros(0)

    row_duals = np.zeros(problem.num_constraints)
    row_duals[eq_rows] = y[:n_eq]
    row_duals[ineq_rows] = y[n_eq:n_eq + n_ineq]

    sol = SdpSolution(
        status=status, objective=float(-q @ x), psd_values=psd_values,
        nonneg_values=nonneg_values, free_values=free_values,
        row_duals=row_duals, psd_duals=psd_duals, nonneg_duals=nonneg_duals,
        residuals={}, backend=backend, info=info, raw=(x, y, np.asarray(s)),
    )
    if (status in ("optimal", "numerical_failure")
            and np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        sol.residuals = kkt_residuals(problem, sol)
        if status == "optimal" and max(sol.residuals.values()) > tol:
            sol.status = "numerical_failure"
    return sol


def _solve_clarabel(problem, A, b, q, cones, opts):
    import clarabel

    cone_list = []
    if cones["n_eq"]:
        cone_list.append(clarabel.ZeroConeT(cones["n_eq"]))
    if cones["n_ineq"] + cones["nonneg"]:
        cone_list.append(clarabel.NonnegativeConeT(cones["n_ineq"] + cones["nonneg"]))
    for n in cones["psd"]:
        cone_list.append(clarabel.PSDTriangleConeT(n))
    settings = clarabel.DefaultSettings()
    settings.verbose = opts.verbose
    eps = opts.tol / opts.check_tol_factor
    settings.tol_gap_abs = eps
    settings.tol_gap_rel = eps
    settings.tol_feas = eps
    settings.max_iter = opts.max_iter if opts.max_iter else 200
    P = sp.csc_matrix((A.shape[1], A.shape[1]))
    solver = clarabel.DefaultSolver(P, q, A.tocsc(), b, cone_list, settings)
    res = solver.solve()
    name = str(res.status)
    if name in ("Solved", "AlmostSolved"):
        status = "optimal"
    elif "PrimalInfeasible" in name:
        status = "infeasible"
    elif "DualInfeasible" in name:
        status = "unbounded"
    else:
        status = "numerical_failure"
    info = {"backend_status": name, "iterations": res.iterations,
            "solve_time": res.solve_time}
    return np.array(res.x), np.array(res.z), np.array(res.s), status, info


def _solve_scs(problem, A, b, q, cones, opts):
    import scs

    cone = {}
    if cones["n_eq"]:
        cone["z"] = cones["n_eq"]
    if cones["n_ineq"] + cones["nonneg"]:
        cone["l"] = cones["n_ineq"] + cones["nonneg"]
    if cones["psd"]:
        cone["s"] = list(cones["psd"])
    eps = opts.tol / opts.check_tol_factor
    kw = dict(eps_abs=eps, eps_rel=eps, verbose=opts.verbose,
              max_iters=int(opts.max_iter) if opts.max_iter else 100_000)
    solver = scs.SCS(dict(A=A.tocsc(), b=b, c=q), cone, **kw)
    if opts.warm_start is not None:
        x0, y0, s0 = opts.warm_start
        res = solver.solve(warm_start=True, x=np.asarray(x0, dtype=float),
                           y=np.asarray(y0, dtype=float),
                           s=np.asarray(s0, dtype=float))
    else:
        res = solver.solve()
    name = res["info"]["status"].lower()
    if name.startswith("solved"):
        status = "optimal"
    elif "infeasible" in name:
        status = "infeasible"
    elif "unbounded" in name:
        status = "unbounded"
    else:
        status = "numerical_failure"
    info = {"backend_status": name, "iterations": res["info"]["iter"],
            "solve_time": res["info"]["solve_time"] * 1e-3}
    return res["x"], res["y"], res["s"], status, info


def solve_sdp(problem: SdpProblem, opts: SolveOptions | None = None) -> SdpSolution:
    """Solve the program; statuses are reported, never raised.

    When the backend claims optimality the independent KKT residuals are
    verified against ``opts.tol``; failure downgrades the status to
    ``numerical_failure`` with the iterate attached.
    """
    opts = opts or SolveOptions()
    backend = opts.backend
    if backend == "auto":
        max_order = max(problem.psd_orders, default=0)
        backend = "scs" if max_order > 48 else "clarabel"
    A, b, q, cones, _, _ = problem.assemble(backend)
    if backend == "clarabel":
        x, y, s, status, info = _solve_clarabel(problem, A, b, q, cones, opts)
    elif backend == "scs":
        x, y, s, status, info = _solve_scs(problem, A, b, q, cones, opts)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    if status in ("infeasible", "unbounded"):
        return SdpSolution(
            status=status, objective=float("nan"), psd_values=[],
            nonneg_values=np.zeros(0), free_values=np.zeros(0),
            row_duals=np.zeros(problem.num_constraints), psd_duals=[],
            nonneg_duals=np.zeros(0), residuals={}, backend=backend, info=info,
            raw=(np.asarray(x), np.asarray(y), np.asarray(s)),
        )
    return _extract(problem, backend, x, y, s, status, info, opts.tol)


def kkt_residuals(problem: SdpProblem, sol: SdpSolution) -> dict:
    """Primal/dual/gap residuals re-derived from the raw problem data.

    Requires a solution carrying full primal/dual data (statuses
    ``infeasible``/``unbounded`` are rejected).
    """
    if sol.status in ("infeasible", "unbounded") or sol.raw is None:
        raise ValueError("kkt_residuals requires full primal/dual data")
    vals = sol.entry_values(problem)

    # Primal feasibility: constraint rows plus cone membership.
    p_res = 0.0
    for (idx, coef), sense, rhs in zip(problem._rows, problem._senses,
                                       problem._rhs):
        lhs = float(coef @ vals[idx])
        scale = 1.0 + abs(rhs)
        if sense == "==":
            p_res = max(p_res, abs(lhs - rhs) / scale)
        elif sense == "<=":
            p_res = max(p_res, max(0.0, lhs - rhs) / scale)
        else:
            p_res = max(p_res, max(0.0, rhs - lhs) / scale)
    for X in sol.psd_values:
        lam = np.linalg.eigvalsh(X)[0]
        p_res = max(p_res, max(0.0, -lam) / (1.0 + abs(lam)))
    if sol.nonneg_values.size:
        p_res = max(p_res, max(0.0, -float(sol.nonneg_values.min())))

    # Dual feasibility: stationarity plus dual cone membership.
    backend = sol.backend
    A, b, q, cones, _, _ = problem.assemble(backend)
    x, y, _ = sol.raw
    grad = A.T @ y + q
    d_res = float(np.max(np.abs(grad))) / (1.0 + float(np.max(np.abs(q), initial=0.0)))
    n_eq = cones["n_eq"]
    n_in = cones["n_ineq"] + cones["nonneg"]
    if n_in:
        d_res = max(d_res, max(0.0, -float(y[n_eq:n_eq + n_in].min())))
    for S in sol.psd_duals:
        lam = np.linalg.eigvalsh(S)[0]
        d_res = max(d_res, max(0.0, -lam) / (1.0 + abs(lam)))

    # Duality gap (maximize convention): dual objective is b'y.
    p_obj = float(-q @ x)
    d_obj = float(b @ y)
    gap = abs(p_obj - d_obj) / (1.0 + max(abs(p_obj), abs(d_obj)))
    return {"primal_feas": p_res, "dual_feas": d_res, "gap": gap}


class HermitianBlockHandle:
    """Complex Hermitian PSD variable of order n, embedded as a 2n real block.

    Provides coefficient builders for real-valued linear functionals of the
    complex variable (traces against Hermitian matrices, real/imaginary
    parts of single entries) and extraction of the Hermitized complex
    solution block.
    """

    def __init__(self, problem: SdpProblem, n: int):
        self.problem = problem
        self.n = n
        self.block = problem.add_psd_block(2 * n)

    def _pe(self, i, j):
        return self.problem.psd_entry(self.block, i, j)

    def trace_coeffs(self, Amat: np.ndarray):
        """(ids, coefs) implementing the real value tr(A X) for Hermitian A."""
        n = self.n
        A = np.asarray(Amat, dtype=complex)
        ids, coefs = [], []
        for i in range(n):
            a = A[i, i].real
            if a != 0.0:
                ids += [self._pe(i, i), self._pe(n + i, n + i)]
                coefs += [a / 2.0, a / 2.0]
        iu, ju = np.triu_indices(n, k=1)
        for i, j in zip(iu, ju):
            re, im = A[i, j].real, A[i, j].imag
            if re != 0.0:
                ids += [self._pe(i, j), self._pe(n + i, n + j)]
                coefs += [re, re]
            if im != 0.0:
                ids += [self._pe(j, n + i), self._pe(i, n + j)]
                coefs += [im, -im]
        return np.array(ids, dtype=np.int64), np.array(coefs)

    def entry_coeffs(self, i: int, j: int, part: str):
        """(ids, coefs) for Re or Im of X[i, j] (i <= j)."""
        n = self.n
        if i > j:
            raise ValueError("address upper-triangle entries only")
        if part == "re":
            return (np.array([self._pe(i, j), self._pe(n + i, n + j)]),
                    np.array([0.5, 0.5]))
        if part == "im":
            if i == j:
                return np.zeros(0, dtype=np.int64), np.zeros(0)
            return (np.array([self._pe(j, n + i), self._pe(i, n + j)]),
                    np.array([0.5, -0.5]))
        raise ValueError("part must be 're' or 'im'")

    def extract(self, sol: SdpSolution) -> np.ndarray:
        """Hermitized complex solution block."""
        E = sol.psd_values[self.block]
        n = self.n
        X = (E[:n, :n] + E[n:, n:]) / 2.0
        Y = (E[n:, :n] - E[:n, n:]) / 2.0
        H = X + 1j * Y
        return (H + H.conj().T) / 2.0
