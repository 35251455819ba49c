"""End-to-end identification: ARX fit, structured reduction, noise model, components, topology."""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import arx, netmodel, polymat, structured
from .netmodel import ContinuousNetwork
from .polymat import PolyMatrix
from .simulate import Dataset, structured_residual, whiteness
from .structured import Constraint, ParamLayout

log = logging.getLogger(__name__)

_PATH = re.compile(r"(a|b|cbar)\[(\d+)\]\[(\d+)\]\[(\d+)\]")
_TERM = re.compile(
    r"\s*([+-])?\s*(\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)?\s*\*?\s*"
    r"((?:a|b|cbar)\[\d+\]\[\d+\]\[\d+\])\s*"
)


class IdentificationError(RuntimeError):
    """A stage of the identification failed; ``step`` is its position in the algorithm (1-6)."""

    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


class CheckFailed(RuntimeError):
    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


def parse_path(text: str) -> tuple[str, int, int, int]:
    """``'b[1][1][0]'`` -> ``('b', 0, 0, 0)``; node and input numbers are 1-based, lags are not."""
    m = _PATH.fullmatch(text.strip())
    if not m:
        raise ValueError(f"bad parameter path {text!r}")
    kind, i, j, lag = m.group(1), int(m.group(2)), int(m.group(3)), int(m.group(4))
    if i < 1 or j < 1:
        raise ValueError(f"node indices are 1-based in {text!r}")
    return kind, i - 1, j - 1, lag


def parse_constraint(text: str) -> tuple[dict, float]:
    """Parse ``'fix b[1][1][0] = 1'`` or ``'2*a[1][2][0] - b[1][1][0] = 0.5'``."""
    body = text.strip()
    if body.startswith("fix "):
        body = body[4:]
    if body.count("=") != 1:
        raise ValueError(f"constraint needs exactly one '=': {text!r}")
    lhs, rhs = body.split("=")
    terms: dict[str, float] = {}
    pos = 0
    lhs = lhs.strip()
    while pos < len(lhs):
        m = _TERM.match(lhs, pos)
        if not m or m.end() == pos:
            raise ValueError(f"cannot parse constraint term at {lhs[pos:]!r}")
        coef = float(m.group(2)) if m.group(2) else 1.0
        if m.group(1) == "-":
            coef = -coef
        parse_path(m.group(3))
        terms[m.group(3)] = terms.get(m.group(3), 0.0) + coef
        pos = m.end()
    if not terms:
        raise ValueError(f"constraint has no parameter terms: {text!r}")
    return terms, float(rhs)


@dataclass
class ModelSetSpec:
    """Model set: orders, which ``A``/``B`` entries are fixed (and to what), extra linear constraints.

    ``a_fixed`` is keyed by ``(lag, i, j)`` with ``i <= j`` (0-based) so the
    mask is symmetric by construction; ``b_fixed`` by ``(lag, i, j)``.
    ``linear`` holds ``(terms, rhs)`` pairs with 1-based path names.
    """

    L: int
    K: int
    n_a: int
    n_b: int
    n_c: int
    a_fixed: dict = field(default_factory=dict)
    b_fixed: dict = field(default_factory=dict)
    linear: list = field(default_factory=list)

    def __post_init__(self):
        if self.L < 1 or min(self.K, self.n_a, self.n_b, self.n_c) < 0:
            raise ValueError("orders must be non-negative with L >= 1")
        a_fixed = {}
        for (lag, i, j), v in self.a_fixed.items():
            key = (lag, min(i, j), max(i, j))
            if key in a_fixed and a_fixed[key] != v:
                raise ValueError(f"asymmetric mask at a[{i + 1}][{j + 1}][{lag}]")
            self._check(lag, i, j, self.n_a, self.L)
            a_fixed[key] = float(v)
        for (lag, i, j) in self.b_fixed:
            self._check(lag, i, j, self.n_b, self.K)
        self.a_fixed = a_fixed
        self.b_fixed = {k: float(v) for k, v in self.b_fixed.items()}

    def _check(self, lag, i, j, degree, cols):
        if not (0 <= lag <= degree and 0 <= i < self.L and 0 <= j < cols):
            raise ValueError(f"mask entry ({lag}, {i}, {j}) outside the model set")

    @property
    def layout(self) -> ParamLayout:
        return structured.make_layout(self.L, self.K, self.n_a, self.n_b, self.n_c)

    def a_free(self, lag: int, i: int, j: int) -> bool:
        return (lag, min(i, j), max(i, j)) not in self.a_fixed

    def a_value(self, lag: int, i: int, j: int) -> float | None:
        return self.a_fixed.get((lag, min(i, j), max(i, j)))

    def diagonal_lags(self) -> list[int]:
        """Lags whose ``A_k`` is constrained diagonal by the mask."""
        out = []
        for lag in range(self.n_a + 1):
            if all(self.a_value(lag, i, j) == 0.0
                   for i in range(self.L) for j in range(i + 1, self.L)):
                out.append(lag)
        return out

    def allowed_pairs(self) -> set:
        """Node pairs (0-based) whose coupling is not fixed to zero at every lag."""
        return {(i, j) for i in range(self.L) for j in range(i + 1, self.L)
                if any(self.a_value(lag, i, j) != 0.0 for lag in range(self.n_a + 1))}

    def constraint(self) -> Constraint:
        lay = self.layout
        fixed = {lay.a(i, j, lag): v for (lag, i, j), v in self.a_fixed.items()}
        fixed.update({lay.b(i, j, lag): v for (lag, i, j), v in self.b_fixed.items()})
        rows, rhs = [], []
        for terms, value in self.linear:
            idx = {lay.index(*parse_path(p)): c for p, c in terms.items()}
            if len(idx) == 1:
                (k, c), = idx.items()
                fixed[k] = value / c
                continue
            row = np.zeros(lay.dim)
            for k, c in idx.items():
                row[k] += c
            rows.append(row)
            rhs.append(value)
        for k in sorted(fixed):
            row = np.zeros(lay.dim)
            row[k] = 1.0
            rows.append(row)
            rhs.append(fixed[k])
        if not rows:
            return Constraint.empty(lay.dim)
        return Constraint(np.array(rows), np.array(rhs))

    @classmethod
    def from_dict(cls, cfg: dict) -> "ModelSetSpec":
        """Build from a config mapping; see the README for the key names."""
        L, K = int(cfg["L"]), int(cfg.get("K", 1))
        na, nb, nc = int(cfg["na"]), int(cfg.get("nb", 0)), int(cfg.get("nc", 0))
        a_fixed, b_fixed = {}, {}
        for lag in cfg.get("diagonal_lags", []):
            for i in range(L):
                for j in range(i + 1, L):
                    a_fixed[(int(lag), i, j)] = 0.0
        for lag, table in (cfg.get("A") or {}).items():
            tab = _table(table, L, L, f"A[{lag}]")
            for i in range(L):
                for j in range(i, L):
                    if tab[i][j] != tab[j][i]:
                        raise ValueError(f"A[{lag}] table is not symmetric at ({i + 1}, {j + 1})")
                    if tab[i][j] != "free":
                        a_fixed[(int(lag), i, j)] = float(tab[i][j])
        for lag, table in (cfg.get("B") or {}).items():
            tab = _table(table, L, K, f"B[{lag}]")
            for i in range(L):
                for j in range(K):
                    if tab[i][j] != "free":
                        b_fixed[(int(lag), i, j)] = float(tab[i][j])
        linear = [parse_constraint(c) for c in cfg.get("constraints", [])]
        return cls(L, K, na, nb, nc, a_fixed, b_fixed, linear)

    def to_dict(self) -> dict:
        out = {"L": self.L, "K": self.K, "na": self.n_a, "nb": self.n_b, "nc": self.n_c}
        A, B = {}, {}
        for lag in range(self.n_a + 1):
            A[str(lag)] = [[self.a_value(lag, i, j) if not self.a_free(lag, i, j) else "free"
                            for j in range(self.L)] for i in range(self.L)]
        for lag in range(self.n_b + 1):
            B[str(lag)] = [[self.b_fixed.get((lag, i, j), "free") for j in range(self.K)]
                           for i in range(self.L)]
        out["A"], out["B"] = A, B
        out["constraints"] = [_format_constraint(terms, rhs) for terms, rhs in self.linear]
        return out


def _format_constraint(terms: dict, rhs: float) -> str:
    parts = []
    for k, (path, c) in enumerate(terms.items()):
        sign = "-" if c < 0 else ("+" if k else "")
        parts.append(f"{sign} {abs(c)!r}*{path}".strip())
    return " ".join(parts) + f" = {rhs!r}"


def _table(table, rows, cols, name):
    if len(table) != rows or any(len(r) != cols for r in table):
        raise ValueError(f"{name} table must be {rows} x {cols}")
    for r in table:
        for v in r:
            if not (v == "free" or isinstance(v, (int, float))):
                raise ValueError(f"{name} entries must be numbers or 'free', got {v!r}")
    return table


# ---------------------------------------------------------------- checks


@dataclass(frozen=True)
class InformativityReport:
    passed: bool
    depth: int
    min_eig: float
    max_eig: float
    tol: float

    def __bool__(self):
        return self.passed

    def lines(self) -> list[str]:
        verdict = "PASS" if self.passed else "FAIL"
        return [f"informativity: {verdict} (depth {self.depth}, min eig {self.min_eig:.6g}, "
                f"max eig {self.max_eig:.6g})"]


def check_informativity(r: np.ndarray, depth: int, tol: float = 1e-8) -> InformativityReport:
    """Persistency of excitation of ``r`` up to ``depth`` lags.

    The sample Gram matrix of the stacked windows ``[r(t); ...; r(t-depth+1)]``
    (fully observed windows only) must have a minimum eigenvalue above
    ``tol`` times its largest one.
    """
    r = np.atleast_2d(np.asarray(r, dtype=float))
    K, N = r.shape
    if K == 0 or depth < 1 or N < depth:
        return InformativityReport(False, depth, 0.0, 0.0, tol)
    win = sliding_window_view(r, depth, axis=1)  # (K, N - depth + 1, depth)
    Phi = win.transpose(1, 0, 2).reshape(win.shape[1], K * depth)
    G = Phi.T @ Phi / Phi.shape[0]
    eig = np.linalg.eigvalsh(G)
    lo, hi = float(eig[0]), float(eig[-1])
    return InformativityReport(bool(hi > 0 and lo > tol * hi), depth, lo, hi, tol)


@dataclass(frozen=True)
class IdentifiabilityReport:
    conditions: dict  # number -> (status, reason)

    @property
    def passed(self) -> bool:
        return all(status == "PASS" for k, (status, _) in self.conditions.items() if k != 1)

    def __bool__(self):
        return self.passed

    def lines(self) -> list[str]:
        return [f"condition {k}: {status} ({reason})" for k, (status, reason) in sorted(self.conditions.items())]


def check_identifiability(spec: ModelSetSpec) -> IdentifiabilityReport:
    cond = {1: ("NOT CHECKED", "coprimeness of A and B is not verified")}

    witness = None
    for lag in spec.diagonal_lags():
        if all(spec.a_value(lag, i, i) != 0.0 for i in range(spec.L)):
            witness = f"A_{lag} is diagonal"
            break
    if witness is None and spec.K == spec.L:
        for lag in range(spec.n_b + 1):
            off_zero = all(spec.b_fixed.get((lag, i, j)) == 0.0
                           for i in range(spec.L) for j in range(spec.K) if i != j)
            diag_ok = all(spec.b_fixed.get((lag, i, i), 1.0) != 0.0 for i in range(spec.L))
            if off_zero and diag_ok:
                witness = f"B_{lag} is diagonal"
                break
    cond[2] = ("PASS", witness + " and full rank") if witness else (
        "FAIL", "no A_k or B_l is constrained diagonal with nonzero diagonal")

    cond[3] = ("PASS", f"K = {spec.K}") if spec.K >= 1 else ("FAIL", "no external excitation (K = 0)")

    c = spec.constraint()
    if c.m == 0:
        cond[4] = ("FAIL", "no parameter constraint fixes the scale")
    elif not c.fixes_scale:
        cond[4] = ("FAIL", "all constraint right-hand sides are zero")
    elif not c.full_row_rank:
        cond[4] = ("FAIL", "constraint rows are linearly dependent")
    else:
        cond[4] = ("PASS", f"{c.m} constraint rows with nonzero right-hand side")
    return IdentifiabilityReport(cond)


# ---------------------------------------------------------------- identify


@dataclass(frozen=True)
class IdentifyOptions:
    use_weighting: bool = True
    max_iter: int = 50
    tol: float = 1e-9
    force: bool = False
    topology_threshold: float = 0.05
    informativity_depth: int | None = None


@dataclass(frozen=True)
class IdentResult:
    spec: ModelSetSpec = field(repr=False)
    arx: arx.ArxEstimate = field(repr=False)
    estimate: structured.StructuredEstimate = field(repr=False)
    A: PolyMatrix = field(repr=False)
    B: PolyMatrix = field(repr=False)
    C: PolyMatrix = field(repr=False)
    Lambda: np.ndarray = field(repr=False)
    Xbar: PolyMatrix = field(repr=False)
    Ybar: PolyMatrix = field(repr=False)
    network: ContinuousNetwork = field(repr=False)
    Ts: float = 1.0
    feasibility: float = 0.0
    stability: polymat.StabilityReport | None = field(default=None, repr=False)
    whiteness: float = float("nan")
    topology: frozenset = frozenset()
    warnings: tuple = ()

    def to_dict(self) -> dict:
        lay = self.spec.layout
        est = self.estimate
        return {
            "arx": {"n": self.arx.n, "N": self.arx.N, "zeta": self.arx.zeta.tolist(),
                    "Lambda_bar": self.arx.Lambda_bar.tolist()},
            "structured": {"names": lay.names(), "vartheta": est.vartheta.tolist(),
                           "lambda": est.lam.tolist(), "cost_trace": list(map(float, est.cost_trace)),
                           "iterations": est.iterations, "diverged": est.diverged,
                           "Lambda_bar": est.Lambda_bar.tolist()},
            "noise": {"C": self.C.coeffs.tolist(), "Lambda": self.Lambda.tolist()},
            "components_discrete": {"A": self.A.coeffs.tolist(), "B": self.B.coeffs.tolist(),
                                    "Xbar": self.Xbar.coeffs.tolist(), "Ybar": self.Ybar.coeffs.tolist()},
            "components_continuous": {
                "Ts": self.Ts, "x": self.network.x.tolist(),
                "y": {f"{j + 1}-{k + 1}": c.tolist() for (j, k), c in self.network.y.items()},
                "B": self.network.B.coeffs.tolist(),
            },
            "topology": {"threshold": None, "edges": sorted([j + 1, k + 1] for j, k in self.topology)},
            "diagnostics": {
                "feasibility": self.feasibility,
                "A_inverse_stable": bool(self.stability) if self.stability is not None else None,
                "A_max_root_modulus": self.stability.max_modulus if self.stability is not None else None,
                "whiteness": self.whiteness,
                "warnings": list(self.warnings),
                "sign_violations": self.network.violations(),
            },
        }


def identify(data: Dataset, spec: ModelSetSpec, n: int,
             options: IdentifyOptions | None = None) -> IdentResult:
    """Run the six steps: ARX fit, structured fit, refinement, noise model, split, continuous time."""
    opt = options or IdentifyOptions()
    if data.L != spec.L or data.K != spec.K:
        raise ValueError(f"data has L={data.L}, K={data.K}; model set expects L={spec.L}, K={spec.K}")
    if not opt.force:
        rep = check_identifiability(spec)
        if not rep:
            raise CheckFailed("model set is not identifiable: " + "; ".join(rep.lines()), rep)
        depth = opt.informativity_depth or arx.row_dim(spec.L, spec.K, n)
        inf = check_informativity(data.r, depth)
        if not inf:
            raise CheckFailed("excitation is not informative: " + inf.lines()[0], inf)
    lay = spec.layout
    con = spec.constraint()

    try:
        arx_est = arx.estimate(data, n)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise IdentificationError(1, str(exc)) from exc
    try:
        est = structured.step2(arx_est, data, lay, con, use_weighting=opt.use_weighting)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise IdentificationError(2, str(exc)) from exc
    try:
        est = structured.step3(arx_est, est, data, lay, con, max_iter=opt.max_iter, tol=opt.tol)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise IdentificationError(3, str(exc)) from exc
    A, B, Cbar = structured.unpack(est.vartheta, lay)
    try:
        C, Lambda = structured.recover_noise(est, lay)
    except np.linalg.LinAlgError as exc:
        raise IdentificationError(4, str(exc)) from exc
    try:
        Xbar, Ybar = netmodel.split_A(A)
    except netmodel.StructureError as exc:
        raise IdentificationError(5, str(exc)) from exc
    # reported A is the sum of the reported components (differs from the unpacked A by rounding only)
    A = netmodel.assemble_A(Xbar, Ybar)
    try:
        net = netmodel.undiscretize(Xbar, Ybar, B, data.Ts)
    except (ValueError, netmodel.StructureError) as exc:
        raise IdentificationError(6, str(exc)) from exc

    feas = float(np.max(np.abs(con.Gamma @ est.vartheta - con.gamma))) if con.m else 0.0
    stab = polymat.is_inverse_stable(A)
    white = float("nan")
    if not est.degenerate and polymat.is_inverse_stable(Cbar):
        eps = structured_residual(A, B, Cbar, data)[:, n:]
        white = whiteness(eps)
    edges = topology(Ybar, opt.topology_threshold, spec.allowed_pairs())
    return IdentResult(spec, arx_est, est, A, B, C, Lambda, Xbar, Ybar, net, data.Ts,
                       feas, stab, white, frozenset(edges), est.warnings)


def topology(Ybar: PolyMatrix, threshold: float = 0.05, allowed=None) -> set:
    """Edges ``{j, k}`` (0-based, ``j < k``) whose largest coupling coefficient exceeds
    ``threshold`` times the largest coupling coefficient overall."""
    c = np.abs(Ybar.coeffs)
    L = Ybar.rows
    pairs = [(j, k) for j in range(L) for k in range(j + 1, L)]
    if allowed is not None:
        pairs = [p for p in pairs if p in allowed]
    if not pairs:
        return set()
    peak = {p: float(np.max(c[:, p[0], p[1]])) for p in pairs}
    top = max(peak.values())
    if threshold <= 0:
        return set(pairs)
    if top == 0:
        return set()
    return {p for p, v in peak.items() if v > threshold * top}
