"""One test per acceptance criterion; each prints a PASS/FAIL line at its stated tolerance."""
import itertools
import json
import math
import time

import numpy as np
import pytest

from transona import cli
from transona.afm import OpportunityRow, fit_iafm
from transona.detectors import detect_idle
from transona.events import Event, EventSource
from transona.ingest import ClassLayout, PositionSample, StudentPlace
from transona.ona import centroid_operator, coregister, coregister_objective, means_rotation, sphere_normalize
from transona.spatial import OrientationSample, infer_orientation, screen_alignment
from transona.stats import logistic_aic, poisson_rate_ratio, wilcoxon_rank_sum, wilcoxon_signed_rank
from transona.tma import TifConfig, accumulate

from conftest import make_classroom
from oracles import (SOURCES, brute_accumulate, coregister_closed_form, logistic_gradient_ascent, rank_sum_null,
                     signed_rank_null, two_sided_p)

CODES6 = tuple(f"X:c{i}" for i in range(6))


def test_ac01_accumulation_oracle(verdict):
    rng = np.random.default_rng(101)
    tif = TifConfig(5, 10, 15, 20)
    mismatches, elapsed = 0, 0.0
    for _ in range(1000):
        n = int(rng.integers(0, 51))
        C = int(rng.integers(1, 7))
        codes = CODES6[:C]
        times = np.sort(rng.integers(0, 120_000, n))
        events = [Event(int(t), SOURCES[int(rng.integers(4))],
                        frozenset(rng.choice(codes, int(rng.integers(1, C + 1)), replace=False).tolist()),
                        student="1") for t in times]
        binary = bool(rng.random() < 0.25)
        t0 = time.perf_counter()
        got = accumulate(events, tif, codes, binary).weights
        elapsed += time.perf_counter() - t0
        mismatches += not np.array_equal(got, brute_accumulate(events, tif, codes, binary))
    ok = mismatches == 0 and elapsed < 10
    verdict(1, ok, f"accumulate vs brute force: {mismatches}/1000 mismatches, {elapsed:.2f}s (< 10s)")
    assert ok


def test_ac02_normalization(verdict):
    rng = np.random.default_rng(102)
    worst, zero_ok = 0.0, True
    for _ in range(200):
        W = rng.poisson(0.7, (int(rng.integers(1, 40)), 36)).astype(float)
        W[rng.random(len(W)) < 0.2] = 0
        N, zero = sphere_normalize(W)
        zero_ok &= bool(np.array_equal(zero, ~W.any(axis=1)) and np.all(N[zero] == 0))
        if (~zero).any():
            worst = max(worst, float(np.max(np.abs(np.linalg.norm(N[~zero], axis=1) - 1))))
    ok = worst < 1e-12 and zero_ok
    verdict(2, ok, f"max | ||row|| - 1 | = {worst:.2e} (< 1e-12); zero rows flagged/unscaled: {zero_ok}")
    assert ok


def test_ac03_means_rotation(verdict):
    rng = np.random.default_rng(103)
    dot, gap_err, negated = 0.0, 0.0, True
    for _ in range(200):
        n = int(rng.integers(4, 40))
        X, _ = sphere_normalize(rng.random((n, 16)))
        g = rng.integers(0, 2, n)
        g[:2] = [0, 1]
        labels = np.where(g == 1, "P", "O")
        basis, scores = means_rotation(X, labels, "P")
        dot = max(dot, abs(float(basis.dim1 @ basis.dim2)))
        gap = scores.x[labels == "P"].mean() - scores.x[labels == "O"].mean()
        ref = np.linalg.norm(X[labels == "P"].mean(0) - X[labels == "O"].mean(0))
        gap_err = max(gap_err, abs(gap - ref))
        _, swapped = means_rotation(X, labels, "O")
        negated &= bool(np.array_equal(swapped.x, -scores.x))
    ok = dot < 1e-10 and gap_err < 1e-9 and negated
    verdict(3, ok, f"max|dim1.dim2| = {dot:.1e} (< 1e-10); gap error {gap_err:.1e} (< 1e-9); "
                   f"swap negates exactly: {negated}")
    assert ok


def test_ac04_coregistration(verdict):
    rng = np.random.default_rng(104)
    worst, beaten = 0.0, 0
    C = 5
    for _ in range(50):
        n = int(rng.integers(6, 30))
        X, _ = sphere_normalize(rng.poisson(1.0, (n, C * C)).astype(float))
        labels = np.array(["LOW", "HIGH"] * n)[:n]
        _, scores = means_rotation(X, labels, "LOW")
        nodes = coregister(X, scores, [f"c{i}" for i in range(C)], ridge=1e-6)
        M, keep = centroid_operator(X, C)
        worst = max(worst, float(np.max(np.abs(nodes.points - coregister_closed_form(
            M[keep], scores.as_array()[keep], 1e-6)))))
        base = coregister_objective(nodes.points, X, scores.as_array(), C, 1e-6)
        for _ in range(100):
            scale = 10.0 ** rng.uniform(-6, 0)
            alt = coregister_objective(nodes.points + rng.normal(0, scale, nodes.points.shape), X,
                                       scores.as_array(), C, 1e-6)
            beaten += alt < base
    ok = worst < 1e-8 and beaten == 0
    verdict(4, ok, f"max |P - closed form| = {worst:.1e} (< 1e-8); perturbations beating solution: {beaten}/5000")
    assert ok


def _subset_with_sum(n, target):
    """Some subset of 1..n summing to target (greedy from the top)."""
    out = []
    for r in range(n, 0, -1):
        if r <= target:
            out.append(r)
            target -= r
    assert target == 0
    return out


def test_ac05_wilcoxon_exactness(verdict):
    worst, cases = 0.0, 0
    for n1 in range(1, 9):
        for n2 in range(1, 9):
            null = rank_sum_null(n1, n2)
            seen = {}
            for pos in itertools.combinations(range(1, n1 + n2 + 1), n1):
                seen.setdefault(sum(pos) - n1 * (n1 + 1) // 2, pos)
            for U, pos in seen.items():
                x = [float(r) for r in pos]
                y = [float(r) for r in range(1, n1 + n2 + 1) if r not in pos]
                res = wilcoxon_rank_sum(x, y)
                assert res.method == "EXACT" and res.statistic == U
                worst = max(worst, abs(res.p - two_sided_p(null, U)))
                cases += 1
    for n in range(1, 13):
        null = signed_rank_null(n)
        for V in range(n * (n + 1) // 2 + 1):
            pos = set(_subset_with_sum(n, V))
            d = [float(r) if r in pos else -float(r) for r in range(1, n + 1)]
            res = wilcoxon_signed_rank(d)
            assert res.method == "EXACT" and res.statistic == V
            worst = max(worst, abs(res.p - two_sided_p(null, V)))
            cases += 1
    w0 = wilcoxon_rank_sum([1, 2, 3], [4, 5, 6])
    v6 = wilcoxon_signed_rank([1, 2, 3])
    fixtures = w0.statistic == 0 and w0.p == 0.1 and v6.statistic == 6 and v6.p == 0.25
    ok = worst < 1e-12 and fixtures
    verdict(5, ok, f"{cases} statistic values vs enumeration, max |dp| = {worst:.1e}; "
                   f"W=0 -> p={w0.p}, V=6 -> p={v6.p}")
    assert ok


def test_ac06_logistic_aic(verdict):
    fit0 = logistic_aic(np.zeros((4, 0)), [1, 1, 0, 0])
    aic_err = abs(fit0.aic - (2 + 8 * math.log(2)))
    rng = np.random.default_rng(106)
    worst, done = 0.0, 0
    while done < 50:
        n, d = int(rng.integers(30, 80)), int(rng.integers(1, 4))
        X = rng.normal(size=(n, d))
        y = (rng.random(n) < 1 / (1 + np.exp(-(X @ rng.normal(0, 0.8, d) + rng.normal(0, 0.5))))).astype(float)
        if y.min() == y.max():
            continue
        fit = logistic_aic(X, y)
        if fit.separated:
            continue
        worst = max(worst, float(np.max(np.abs(fit.coefficients - logistic_gradient_ascent(X, y)))))
        done += 1
    ok = aic_err < 1e-6 and worst < 1e-4
    verdict(6, ok, f"intercept-only AIC {fit0.aic:.6f} (err {aic_err:.1e} < 1e-6); "
                   f"IRLS vs gradient ascent max diff {worst:.1e} (< 1e-4) over 50 datasets")
    assert ok


def test_ac07_rate_ratio(verdict):
    rr = poisson_rate_ratio(27, 66, 80, 335)
    ok = abs(rr.irr - 1.71) <= 0.01
    verdict(7, ok, f"IRR = {rr.irr:.4f} (1.71 +/- 0.01), Wald CI [{rr.ci95[0]:.2f}, {rr.ci95[1]:.2f}]")
    assert ok


def _rot(v, a):
    c, s = math.cos(a), math.sin(a)
    return (c * v[0] - s * v[1], s * v[0] + c * v[1])


def _layout(screens):
    return ClassLayout({str(i + 1): StudentPlace(tuple(map(float, s)), tuple(map(float, s)))
                        for i, s in enumerate(screens)}, ((-1e5, -1e5), (1e5, 1e5)))


def test_ac08_spatial_geometry(verdict):
    o = [OrientationSample(0, 0.0, 1.0, True)]
    edge = [e.student for e in screen_alignment(o, [PositionSample(0, 0.0, 0.0, "T")], _layout([(5000, 5000)]))]
    boundary = edge == ["1"]
    rng = np.random.default_rng(108)
    covariant = 0
    for _ in range(100):
        screens = [tuple(rng.uniform(-5000, 5000, 2)) for _ in range(6)]
        trace = [PositionSample(i * 1000, *map(float, rng.uniform(-3000, 3000, 2)), "T") for i in range(10)]
        a = float(rng.uniform(0, 2 * math.pi))
        base = screen_alignment(infer_orientation(trace), trace, _layout(screens))
        rtrace = [PositionSample(s.timestamp, *_rot((s.x, s.y), a), "T") for s in trace]
        rot = screen_alignment(infer_orientation(rtrace), rtrace, _layout([_rot(s, a) for s in screens]))
        covariant += [(e.timestamp, e.student) for e in base] == [(e.timestamp, e.student) for e in rot]

    def tx(t):
        return Event(t, EventSource.TUTOR_LOG, frozenset({"HINT_REQUEST"}), student="1", day="d", period=1)
    idle121 = len(detect_idle([tx(0), tx(121_000)]))
    idle119 = len(detect_idle([tx(0), tx(119_000)]))
    ok = boundary and covariant == 100 and idle121 == 1 and idle119 == 0
    verdict(8, ok, f"45-degree case aligned: {boundary}; rotation covariance {covariant}/100; "
                   f"idle events at 121s/119s: {idle121}/{idle119}")
    assert ok


def test_ac09_iafm(verdict):
    rows = []
    for t in range(30):
        rows.append(OpportunityRow("A", "kc", t, t >= 10 or t % 3 == 0))
        rows.append(OpportunityRow("B", "kc", t, t % 2 == 0))
    fit = fit_iafm(rows, 1.0, 1.0)
    d = fit.delta_by_student
    heavy = fit_iafm(rows, 1.0, 1e6)
    rng = np.random.default_rng(109)
    monotone = all(b >= a for a, b in zip(fit.objective_history, fit.objective_history[1:]))
    for _ in range(10):
        rand = [OpportunityRow(str(s), f"k{k}", t, bool(rng.random() < 0.3 + 0.02 * t))
                for s in range(5) for k in range(2) for t in range(15)]
        h = fit_iafm(rand, 1.0, 1.0).objective_history
        monotone &= all(b >= a for a, b in zip(h, h[1:]))
    dmax = float(np.max(np.abs(heavy.delta)))
    ok = d["A"] > d["B"] and dmax < 1e-3 and monotone
    verdict(9, ok, f"delta_A = {d['A']:.4f} > delta_B = {d['B']:.4f}; lambda_delta=1e6 max|delta| = "
                   f"{dmax:.1e} (< 1e-3); penalized LL non-decreasing: {monotone}")
    assert ok


@pytest.mark.slow
def test_ac10_synthetic_recovery(tmp_path, verdict, capsys):
    t0 = time.perf_counter()
    data, cfg = make_classroom(tmp_path, replicates=1000)
    assert cli.main(["run", str(cfg)]) == 0
    capsys.readouterr()
    elapsed = time.perf_counter() - t0
    out = tmp_path / "out"
    stats = json.loads((out / "stats.json").read_text())
    rows = [line.split(",") for line in (out / "scores.csv").read_text().splitlines()[1:]]
    planted = {s: g for s, g in data.groups.items()}
    x = {"LOW": [], "HIGH": []}
    for unit, _, _, sx, _ in rows:
        x[planted[unit.split("|")[0]]].append(float(sx))
    mr = wilcoxon_rank_sum(x["LOW"], x["HIGH"])
    recovered = dict(line.split(",")[0::2] for line in (out / "learning_rates.csv").read_text().splitlines()[1:])
    recovery = sum(recovered[s] == g for s, g in planted.items()) / len(planted)
    boot = stats["bootstrap"]
    ok = mr.p < 0.01 and boot["preferred"] == "A" and boot["p"] < 0.05 and recovery >= 0.8 and elapsed < 120
    verdict(10, ok, f"MR Wilcoxon p = {mr.p:.1e} (< .01); bootstrap prefers "
                    f"{boot['model_a'] if boot['preferred'] == 'A' else boot['model_b']} p = {boot['p']:.1e} "
                    f"(< .05, 1000 replicates); recovery {recovery:.0%} (>= 80%); {elapsed:.1f}s (< 120s)")
    assert ok


def test_ac11_determinism(tmp_path, verdict, capsys):
    _, cfg = make_classroom(tmp_path, replicates=100)
    outs = []
    for name in ("run1", "run2"):
        assert cli.main(["run", str(cfg), "--output-dir", str(tmp_path / name)]) == 0
        outs.append(tmp_path / name)
    capsys.readouterr()
    compared = ["stats.json"] + sorted(p.name for p in outs[0].glob("*.svg"))
    same = [(outs[0] / n).read_bytes() == (outs[1] / n).read_bytes() for n in compared]
    ok = all(same) and len(compared) > 1
    verdict(11, ok, f"{sum(same)}/{len(compared)} files bit-identical (stats.json and every SVG)")
    assert ok
