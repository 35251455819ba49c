"""Configuration files, signal I/O, metrics and the Monte-Carlo experiment runner."""
from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import netmodel
from .netmodel import ContinuousNetwork, DiscreteModel
from .pipeline import IdentifyOptions, ModelSetSpec, identify
from .polymat import PolyMatrix
from .simulate import Dataset, NoiseSpec, generate

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- files


def resolve(path, base: Path | None = None) -> Path:
    """Find a config file: as given, next to ``base``, or among the shipped data files."""
    p = Path(path)
    if p.exists():
        return p
    if base is not None and (base / p).exists():
        return base / p
    shipped = resources.files("diffnet") / "data" / p.name
    if shipped.is_file():
        return Path(str(shipped))
    raise FileNotFoundError(f"config file {path} not found")


def load_json(path, base: Path | None = None) -> tuple[dict, Path]:
    p = resolve(path, base)
    with open(p) as fh:
        return json.load(fh), p.parent


@dataclass(frozen=True)
class NetworkConfig:
    """A continuous network together with its sampling interval and noise model."""

    network: ContinuousNetwork
    Ts: float
    C: PolyMatrix
    Lambda: np.ndarray = field(repr=False)

    def discrete(self) -> DiscreteModel:
        Xbar, Ybar, B = netmodel.discretize(self.network, self.Ts)
        return DiscreteModel(netmodel.assemble_A(Xbar, Ybar), B, self.C, self.Lambda, self.Ts)

    def with_excitation(self, nodes) -> "NetworkConfig":
        """Replace ``B`` by a static selection matrix exciting the given 0-based nodes."""
        B = np.zeros((1, self.network.L, len(nodes)))
        for col, node in enumerate(nodes):
            B[0, node, col] = 1.0
        net = ContinuousNetwork(self.network.x, self.network.y, PolyMatrix(B))
        return NetworkConfig(net, self.Ts, self.C, self.Lambda)

    def with_noise(self, variance: float | None = None, C: PolyMatrix | None = None) -> "NetworkConfig":
        lam = self.Lambda if variance is None else variance * np.eye(self.network.L)
        return NetworkConfig(self.network, self.Ts, self.C if C is None else C, lam)

    @classmethod
    def from_dict(cls, cfg: dict) -> "NetworkConfig":
        x = np.asarray(cfg["x"], dtype=float)
        L = x.shape[0]
        y = {}
        for key, coeffs in cfg.get("y", {}).items():
            j, k = (int(v) - 1 for v in key.split("-"))
            y[(j, k)] = coeffs
        B = PolyMatrix(np.asarray(cfg.get("B", [np.eye(L, 1).tolist()]), dtype=float))
        net = ContinuousNetwork(x, y, B)
        C = PolyMatrix(np.asarray(cfg["C"], dtype=float)) if "C" in cfg else PolyMatrix.identity(L)
        if "Lambda" in cfg:
            lam = np.asarray(cfg["Lambda"], dtype=float)
        else:
            lam = float(cfg.get("noise_variance", 0.0)) * np.eye(L)
        return cls(net, float(cfg["Ts"]), C, lam)

    def to_dict(self) -> dict:
        return {
            "Ts": self.Ts,
            "x": self.network.x.tolist(),
            "y": {f"{j + 1}-{k + 1}": c.tolist() for (j, k), c in self.network.y.items()},
            "B": self.network.B.coeffs.tolist(),
            "C": self.C.coeffs.tolist(),
            "Lambda": self.Lambda.tolist(),
        }


def load_network(path) -> NetworkConfig:
    cfg, _ = load_json(path)
    return NetworkConfig.from_dict(cfg)


def load_spec(path) -> ModelSetSpec:
    cfg, _ = load_json(path)
    return ModelSetSpec.from_dict(cfg)


def write_csv(path, data: Dataset):
    """Signals as ``t,w1..wL,r1..rK`` with 17 significant digits (exact float round trip)."""
    t = np.arange(data.N) * data.Ts
    header = ["t"] + [f"w{j + 1}" for j in range(data.L)] + [f"r{j + 1}" for j in range(data.K)]
    table = np.column_stack([t, data.w.T, data.r.T])
    np.savetxt(path, table, delimiter=",", header=",".join(header), comments="", fmt="%.17g")


def read_csv(path, Ts: float | None = None) -> Dataset:
    with open(path, newline="") as fh:
        header = next(csv.reader(fh))
    cols = [h.strip() for h in header]
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    w_idx = [i for i, h in enumerate(cols) if h.startswith("w")]
    r_idx = [i for i, h in enumerate(cols) if h.startswith("r")]
    if not w_idx:
        raise ValueError(f"{path}: no w columns in header")
    if Ts is None:
        Ts = float(table[1, 0] - table[0, 0]) if table.shape[0] > 1 and cols[0] == "t" else 1.0
    return Dataset(table[:, w_idx].T, table[:, r_idx].T, Ts)


# ---------------------------------------------------------------- metrics


def rmse(theta_hat, theta0) -> float:
    """``||theta0 - theta_hat||^2 / ||theta0||^2``."""
    theta_hat = np.asarray(theta_hat, dtype=float)
    theta0 = np.asarray(theta0, dtype=float)
    if theta_hat.shape != theta0.shape:
        raise ValueError(f"shape mismatch {theta_hat.shape} vs {theta0.shape}")
    denom = float(theta0 @ theta0)
    if denom == 0:
        raise ValueError("true parameter vector is zero")
    d = theta0 - theta_hat
    return float(d @ d) / denom


def theta_c(net: ContinuousNetwork, n_x: int, n_y: int) -> np.ndarray:
    """Physical parameter vector: ``X_l`` diagonals node by node, then ``Y_l`` off-diagonals pair by pair.

    Coupling entries are the (nonpositive) off-diagonal entries of ``Y_l``.
    Orders beyond what ``net`` stores are zero.
    """
    L = net.L
    X = net.X().padded(max(n_x, net.n_x)).coeffs
    Y = net.Y().padded(max(n_y, net.n_y)).coeffs
    out = [X[: n_x + 1, j, j] for j in range(L)]
    out += [Y[: n_y + 1, j, k] for j in range(L) for k in range(j + 1, L)]
    return np.concatenate(out)


def theta_names(L: int, n_x: int, n_y: int) -> list[str]:
    names = [f"x[{j + 1}][{lag}]" for j in range(L) for lag in range(n_x + 1)]
    names += [f"y[{j + 1}][{k + 1}][{lag}]" for j in range(L) for k in range(j + 1, L)
              for lag in range(n_y + 1)]
    return names


def free_b(net: ContinuousNetwork, spec: ModelSetSpec) -> np.ndarray:
    """Continuous-time ``B`` entries that the model set leaves free."""
    c = net.B.padded(max(net.B.degree, spec.n_b)).coeffs
    return np.array([c[lag, i, j] for lag in range(spec.n_b + 1) for i in range(spec.L)
                     for j in range(spec.K) if (lag, i, j) not in spec.b_fixed])


# ---------------------------------------------------------------- experiments


@dataclass(frozen=True)
class ExperimentConfig:
    network: NetworkConfig
    spec: ModelSetSpec
    schedule: tuple  # ((n, N), ...)
    seed: int = 0
    runs: int = 20
    variance: float = 1.0
    options: IdentifyOptions = IdentifyOptions()
    name: str = "experiment"

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be at least 1")
        if not self.schedule:
            raise ValueError("schedule is empty")
        for n, N in self.schedule:
            if n < 1 or N < 1:
                raise ValueError(f"invalid schedule row (n={n}, N={N})")

    @classmethod
    def from_dict(cls, cfg: dict, base: Path | None = None) -> "ExperimentConfig":
        net_cfg = cfg["network"]
        if isinstance(net_cfg, str):
            net_cfg, _ = load_json(net_cfg, base)
        net = NetworkConfig.from_dict(net_cfg)
        exc = cfg.get("excitation", {})
        if "nodes" in exc:
            net = net.with_excitation([int(v) - 1 for v in exc["nodes"]])
        if "noise_variance" in cfg:
            net = net.with_noise(float(cfg["noise_variance"]))
        if "C" in cfg:
            net = net.with_noise(C=PolyMatrix(np.asarray(cfg["C"], dtype=float)))
        spec_cfg = cfg["spec"]
        if isinstance(spec_cfg, str):
            spec_cfg, _ = load_json(spec_cfg, base)
        spec = ModelSetSpec.from_dict(spec_cfg)
        if "schedule" in cfg:
            schedule = tuple((int(n), int(N)) for n, N in cfg["schedule"])
        else:
            schedule = ((int(cfg["n"]), int(cfg["N"])),)
        opts = IdentifyOptions(**cfg.get("options", {}))
        return cls(net, spec, schedule, int(cfg.get("seed", 0)), int(cfg.get("runs", 20)),
                   float(exc.get("variance", 1.0)), opts, cfg.get("name", "experiment"))

    def replace(self, **kw) -> "ExperimentConfig":
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update({k: v for k, v in kw.items() if v is not None})
        return ExperimentConfig(**d)


def load_experiment(path) -> ExperimentConfig:
    cfg, base = load_json(path)
    return ExperimentConfig.from_dict(cfg, base)


@dataclass
class SetResult:
    n: int
    N: int
    estimates: np.ndarray  # runs x P, NaN rows for failed runs
    b_estimates: np.ndarray
    rmse: np.ndarray  # NaN for failed runs
    edges: list  # per run: sorted 1-based pairs, or None
    failures: list  # (run, reason)
    runtime: float

    @property
    def rate(self) -> float:
        return self.n ** 4 / self.N

    @property
    def ok(self) -> np.ndarray:
        return ~np.isnan(self.rmse)


@dataclass
class ExperimentReport:
    name: str
    names: list
    theta_true: np.ndarray
    true_edges: list
    sets: list

    def mean(self, k: int = 0) -> np.ndarray:
        s = self.sets[k]
        return np.mean(s.estimates[s.ok], axis=0)

    def sd(self, k: int = 0) -> np.ndarray:
        s = self.sets[k]
        return np.std(s.estimates[s.ok], axis=0, ddof=1)

    def relative_errors(self, k: int = 0) -> np.ndarray:
        """Relative errors of the nonzero-true parameters, runs x P_nonzero."""
        s = self.sets[k]
        nz = self.theta_true != 0
        return (s.estimates[s.ok][:, nz] - self.theta_true[nz]) / np.abs(self.theta_true[nz])

    def to_dict(self) -> dict:
        out = {"name": self.name, "names": self.names, "theta_true": self.theta_true.tolist(),
               "true_edges": self.true_edges, "sets": []}
        for k, s in enumerate(self.sets):
            ok = s.ok
            entry = {
                "n": s.n, "N": s.N, "rate": s.rate, "runs": len(s.rmse),
                "failed": len(s.failures), "failures": [list(f) for f in s.failures],
                "runtime_s": s.runtime,
                "rmse": [None if np.isnan(v) else float(v) for v in s.rmse],
                "median_rmse": float(np.median(s.rmse[ok])) if ok.any() else None,
                "edges": s.edges,
            }
            if ok.sum() >= 2:
                entry["mean"] = self.mean(k).tolist()
                entry["sd"] = self.sd(k).tolist()
            entry["estimates"] = [None if not good else row.tolist() for row, good in zip(s.estimates, ok)]
            if s.b_estimates.size:
                entry["b_estimates"] = [None if not good else row.tolist()
                                        for row, good in zip(s.b_estimates, ok)]
            out["sets"].append(entry)
        return out

    def write_samples_csv(self, path):
        """Boxplot-ready samples: one row per (set, run) with RMSE and every parameter."""
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["set", "n", "N", "run", "rmse"] + self.names)
            for k, s in enumerate(self.sets):
                for run, (row, err) in enumerate(zip(s.estimates, s.rmse)):
                    wr.writerow([k + 1, s.n, s.N, run, repr(float(err))] + [repr(float(v)) for v in row])


def run_seeds(master: int, set_index: int, run: int):
    """Independent generators for excitation and noise of one replication."""
    ss = np.random.SeedSequence([master, set_index, run])
    r_ss, e_ss = ss.spawn(2)
    return np.random.default_rng(r_ss), e_ss


def _one_run(job):
    cfg, set_index, run, n, N = job
    model = cfg.network.discrete()
    rng_r, e_seed = run_seeds(cfg.seed, set_index, run)
    r = np.sqrt(cfg.variance) * rng_r.standard_normal((model.K, N))
    data = generate(model, r, NoiseSpec(model.Lambda, e_seed))
    nx, ny = cfg.network.network.n_x, cfg.network.network.n_y
    try:
        res = identify(data, cfg.spec, n, cfg.options)
    except Exception as exc:  # recorded, not fatal
        return None, None, None, f"{type(exc).__name__}: {exc}"
    theta = theta_c(res.network, nx, ny)
    edges = sorted([j + 1, k + 1] for j, k in res.topology)
    return theta, free_b(res.network, cfg.spec), edges, None


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> ExperimentReport:
    """Monte-Carlo replications for every schedule row; results ordered by run index."""
    net = cfg.network.network
    theta0 = theta_c(net, net.n_x, net.n_y)
    names = theta_names(net.L, net.n_x, net.n_y)
    n_free_b = len([1 for lag in range(cfg.spec.n_b + 1) for i in range(cfg.spec.L)
                    for j in range(cfg.spec.K) if (lag, i, j) not in cfg.spec.b_fixed])
    sets = []
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    try:
        for k, (n, N) in enumerate(cfg.schedule):
            t0 = time.perf_counter()
            jobs = [(cfg, k, run, n, N) for run in range(cfg.runs)]
            results = list(pool.map(_one_run, jobs)) if pool else [_one_run(j) for j in jobs]
            est = np.full((cfg.runs, theta0.size), np.nan)
            best = np.full((cfg.runs, n_free_b), np.nan)
            err = np.full(cfg.runs, np.nan)
            edges, failures = [], []
            for run, (theta, b, e, reason) in enumerate(results):
                if reason is not None:
                    failures.append((run, reason))
                    edges.append(None)
                    log.warning("set %d run %d failed: %s", k + 1, run, reason)
                    continue
                est[run] = theta
                best[run] = b
                err[run] = rmse(theta, theta0)
                edges.append(e)
            sets.append(SetResult(n, N, est, best, err, edges, failures, time.perf_counter() - t0))
            log.info("set %d (n=%d, N=%d) done in %.1f s", k + 1, n, N, sets[-1].runtime)
    finally:
        if pool:
            pool.shutdown()
    true_edges = sorted([j + 1, k + 1] for j, k in net.edges())
    return ExperimentReport(cfg.name, names, theta0, true_edges, sets)


def run_experiment1(cfg: ExperimentConfig, workers: int = 1) -> ExperimentReport:
    return run_experiment(cfg, workers)


def run_experiment2(cfg: ExperimentConfig, workers: int = 1) -> ExperimentReport:
    if len(cfg.schedule) != 1:
        raise ValueError("experiment 2 uses a single (n, N) pair")
    return run_experiment(cfg, workers)
