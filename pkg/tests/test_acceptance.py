"""The eight acceptance criteria, each at its stated tolerance and time budget."""
import time

import numpy as np

from diffnet import arx, harness, netmodel, simulate, structured
from diffnet.netmodel import DiscreteModel
from diffnet.pipeline import ModelSetSpec, check_identifiability, identify
from diffnet.polymat import PolyMatrix
from diffnet.simulate import NoiseSpec
from oracles import random_structured_model, true_vartheta, true_zeta

# Reported standard deviations of the 24 X/Y parameter estimates with three excitations
REFERENCE_SD_K3 = np.array([
    4.7774e-3, 2.8210e-4, 1.2971e-6, 8.2831e-3, 4.9076e-4, 1.3605e-5, 1.5390e-2, 1.1072e-3,
    4.8096e-5, 3.0088e-2, 1.8316e-3, 7.9796e-5, 2.8000e-3, 1.9475e-4, 3.0851e-3, 1.1680e-4,
    3.4376e-3, 1.6190e-4, 6.1368e-3, 3.9797e-4, 7.6248e-3, 2.8442e-4, 1.3217e-2, 9.3302e-4,
])
# Reported K=3 mean of the seventh parameter carries the wrong sign; compared by magnitude
MAGNITUDE_ONLY = {6}


def test_criterion_1_noiseless_exact_recovery(four_node, four_node_identity_noise, spec_k1, acceptance):
    t0 = time.perf_counter()
    spec = ModelSetSpec(**{**spec_k1.__dict__, "n_c": 0})
    r = np.random.default_rng(1).standard_normal((1, 2000))
    data = simulate.generate(four_node_identity_noise, r)
    res = identify(data, spec, 2)
    elapsed = time.perf_counter() - t0
    theta0 = harness.theta_c(four_node.network, 2, 1)
    theta = np.concatenate([harness.theta_c(res.network, 2, 1), res.network.B.coeffs.ravel()])
    theta0 = np.concatenate([theta0, four_node.network.B.coeffs.ravel()])
    nz = theta0 != 0
    rel = np.abs(theta[nz] - theta0[nz]) / np.abs(theta0[nz])
    zero_dev = np.abs(theta[~nz]).max() / np.abs(theta0).max()
    ok = rel.max() < 1e-6 and zero_dev < 1e-6 and elapsed < 5.0
    assert acceptance(1, ok, f"max relative error {rel.max():.2e}, zero entries {zero_dev:.2e} of scale, "
                             f"{elapsed:.2f} s")


def test_criterion_2_null_space_and_T_identity(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst_q = worst_t = 0.0
    for _ in range(50):
        L = int(rng.integers(2, 5))
        model, lay = random_structured_model(rng, L=L, n_c=0)
        n = max(lay.n_a, lay.n_b, 1) + int(rng.integers(0, 4))
        v0 = true_vartheta(model, lay)
        z0 = true_zeta(model, n)
        worst_q = max(worst_q, np.abs(structured.build_Q(z0, lay, n) @ v0).max())
        zh = z0 + rng.standard_normal(z0.size)
        lhs = -structured.build_Q(zh, lay, n) @ v0
        rhs = structured.build_T(v0, lay, n) @ (zh - z0)
        worst_t = max(worst_t, np.abs(lhs - rhs).max())
    elapsed = time.perf_counter() - t0
    ok = worst_q < 1e-10 and worst_t < 1e-10 and elapsed < 10.0
    assert acceptance(2, ok, f"max |Q v0| {worst_q:.2e}, max T-identity residual {worst_t:.2e}, {elapsed:.2f} s")


def test_criterion_3_three_excitations(exp2_k3_report, acceptance):
    rep = exp2_k3_report
    s = rep.sets[0]
    mean, sd = rep.mean(), rep.sd()
    truth = rep.theta_true.copy()
    bias = np.abs(mean - truth)
    for k in MAGNITUDE_ONLY:
        bias[k] = abs(abs(mean[k]) - abs(truth[k]))
    bias_ratio = bias / REFERENCE_SD_K3
    sd_ratio = sd / REFERENCE_SD_K3
    ok = (s.ok.sum() == 20 and bias_ratio.max() < 4 and sd_ratio.min() > 1 / 3 and sd_ratio.max() < 3
          and s.runtime < 600)
    assert acceptance(3, ok, f"{s.ok.sum()}/20 runs, max |bias|/SD {bias_ratio.max():.2f}, SD ratio "
                             f"{sd_ratio.min():.2f}..{sd_ratio.max():.2f}, {s.runtime:.0f} s")


def test_criterion_4_single_excitation(exp2_k1_report, acceptance):
    rep = exp2_k1_report
    s = rep.sets[0]
    rel = rep.relative_errors()
    med = np.median(rel, axis=0)
    q1, q3 = np.percentile(rel, [25, 75], axis=0)
    iqr = q3 - q1
    ok = s.ok.sum() == 20 and np.abs(med).max() <= 0.05 and iqr.max() <= 0.2 and s.runtime < 600
    assert acceptance(4, ok, f"{s.ok.sum()}/20 runs, max |median| {np.abs(med).max():.3f}, "
                             f"max IQR {iqr.max():.3f}, {s.runtime:.0f} s")


def test_criterion_5_rmse_trend(acceptance):
    cfg = harness.load_experiment("exp1.json").replace(
        runs=10, schedule=((3, 96), (6, 1852), (9, 11930), (12, 51841)))
    t0 = time.perf_counter()
    rep = harness.run_experiment1(cfg)
    elapsed = time.perf_counter() - t0
    med = [np.median(s.rmse[s.ok]) for s in rep.sets]
    failed = sum(len(s.failures) for s in rep.sets)
    ok = all(a > b for a, b in zip(med, med[1:])) and med[-1] < 0.1 * med[0] and elapsed < 900
    assert acceptance(5, ok, "median RMSE " + ", ".join(f"{m:.2e}" for m in med)
                      + f"; {failed} failed runs, {elapsed:.0f} s")


def test_criterion_6_topology(exp2_k3_report, acceptance):
    rep = exp2_k3_report
    hits = sum(e == rep.true_edges for e in rep.sets[0].edges)
    ok = hits >= 18
    assert acceptance(6, ok, f"exact edge set in {hits}/20 runs, true edges {rep.true_edges}")


def test_criterion_7_structural_suite(four_node, acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst_rt = 0.0
    split_exact = rank_ok = True
    for _ in range(1000):
        L = int(rng.integers(2, 7))
        nx, ny = int(rng.integers(0, 3)), int(rng.integers(0, 3))
        net = netmodel.random_network(rng, L, nx, ny)
        Ts = float(rng.uniform(1e-2, 1.0))
        Xbar, Ybar, B = netmodel.discretize(net, Ts)
        back = netmodel.undiscretize(Xbar, Ybar, B, Ts)
        X2, Y2, _ = netmodel.discretize(back, Ts)
        for P, Q in ((Xbar, X2), (Ybar, Y2)):
            worst_rt = max(worst_rt, np.abs(P.coeffs - Q.coeffs).max() / np.abs(P.coeffs).max())
        A = netmodel.assemble_A(Xbar, Ybar)
        Xs, Ys = netmodel.split_A(A)
        split_exact &= np.array_equal(netmodel.assemble_A(Xs, Ys).coeffs, A.coeffs)
        rank_ok &= bool(netmodel.verify_rank_A0(A))

    m = four_node.discrete()
    N = 10000
    rng_r, e_seed = harness.run_seeds(7, 0, 0)
    data = simulate.generate(m, rng_r.standard_normal((1, N)), NoiseSpec(m.Lambda, e_seed))
    acf = simulate.autocorrelation(simulate.prediction_error(m, data), 20)
    white = np.abs(acf).max() * np.sqrt(N)
    outside = int(np.sum(np.abs(acf) * np.sqrt(N) >= 3))

    N = 100000
    rng_r, e_seed = harness.run_seeds(7, 1, 0)
    data = simulate.generate(m, rng_r.standard_normal((1, N)), NoiseSpec(m.Lambda, e_seed))
    eps = simulate.prediction_error(m, data)
    target = simulate.innovation_covariance(m.A.coeffs[0], m.Lambda)
    cov_err = np.linalg.norm(eps @ eps.T / N - target) / np.linalg.norm(target)
    elapsed = time.perf_counter() - t0

    ok = worst_rt < 1e-10 and split_exact and rank_ok and white < 3 and cov_err < 0.05 and elapsed < 120
    assert acceptance(7, ok, f"round trip {worst_rt:.1e}, split exact {split_exact}, rank {rank_ok}, "
                             f"max |acf| sqrt(N) {white:.2f} ({outside}/{acf.size} outside), covariance error {cov_err:.3f}, {elapsed:.1f} s")


def test_criterion_8_identifiability_gate(spec_k1, acceptance):
    t0 = time.perf_counter()
    base = spec_k1.__dict__
    mutations = {
        "K=0": ModelSetSpec(4, 0, 2, 0, 1, a_fixed=spec_k1.a_fixed,
                            linear=[({"a[1][1][0]": 1.0}, 1.0)]),
        "gamma=0": ModelSetSpec(**{**base, "b_fixed": {k: 0.0 for k in spec_k1.b_fixed}}),
        "no diagonal": ModelSetSpec(**{**base, "a_fixed": {}}),
    }
    failing = {3: "K=0", 4: "gamma=0", 2: "no diagonal"}
    ref_ok = check_identifiability(spec_k1).passed
    mut_ok = all(not check_identifiability(mutations[name]).passed
                 and check_identifiability(mutations[name]).conditions[cond][0] == "FAIL"
                 for cond, name in failing.items())
    elapsed = time.perf_counter() - t0
    ok = ref_ok and mut_ok and elapsed < 1.0
    assert acceptance(8, ok, f"reference spec {'passes' if ref_ok else 'fails'}, "
                             f"mutations {'all fail' if mut_ok else 'not all fail'}, {elapsed * 1e3:.0f} ms")
