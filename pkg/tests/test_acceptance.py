"""End-to-end acceptance suite; each test prints one PASS/FAIL line.

The trend criteria (imputation ordering, diagnosis trend, feature transfer)
share one session fixture of trained models on the default synthetic dataset.
"""
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from labdx.cli import main
from labdx.config import RunConfig
from labdx.data import prepare_split
from labdx.imputation import HEURISTICS, ModelImputer, evaluate_imputation
from labdx.metrics import PredictionSet, binary_auc, evaluate_predictions, f1_scores, paired_t_test
from labdx.models import ARCHITECTURES
from labdx.problayer import DiagGaussian, kl_diag, kl_rows
from labdx.synth import SynthConfig, synth_generate
from labdx.training import evaluate, feature_transfer, fit

from .helpers import loss_and_grads, mini_model, mini_sequences, objective_grad_check
from .test_metrics import brute_force_auc, onehot_probs

SPLIT_SEEDS = (0, 1, 2, 3, 4)


@pytest.fixture()
def verdict(capsys):
    """Print the criterion line outside pytest's capture, then assert."""

    def emit(number, name, ok, detail):
        with capsys.disabled():
            print(f"\n[acceptance {number}] {name}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, detail

    return emit


def test_1_gradient_correctness(verdict):
    start = time.perf_counter()
    worst = {}
    ok = True
    for arch in sorted(ARCHITECTURES):
        report = objective_grad_check(arch)
        worst[arch] = report.max_rel_error
        ok &= report.passed and report.n_checked > 0
    elapsed = time.perf_counter() - start
    ok &= elapsed < 60
    detail = ", ".join(f"{a} {w:.1e}" for a, w in worst.items()) + f"; {elapsed:.1f}s"
    verdict(1, "gradient correctness", ok, detail)


def test_2_kl_oracle(verdict):
    std = DiagGaussian.from_std([0.0], [1.0])
    fixtures = [
        (kl_diag(std, std), 0.0),
        (kl_diag(DiagGaussian.from_std([1.0], [1.0]), std), 0.5),
        (kl_diag(DiagGaussian.from_std([0.0], [2.0]), std), 0.5 * (3.0 - math.log(4.0))),
    ]
    fixture_err = max(abs(got - want) for got, want in fixtures)
    rng = np.random.default_rng(0)
    q = DiagGaussian(rng.normal(size=(10_000, 4)), rng.normal(size=(10_000, 4)))
    p = DiagGaussian(rng.normal(size=(10_000, 4)), rng.normal(size=(10_000, 4)))
    kl = kl_rows(q, p).data
    ok = fixture_err <= 1e-9 and abs(fixtures[2][0] - 0.80685) <= 1e-5 and bool(np.all(kl >= 0))
    verdict(2, "KL oracle", ok, f"fixture error {fixture_err:.1e}, min over 10^4 pairs {kl.min():.2e}")


def test_3_masking_contract(verdict):
    seqs = mini_sequences(1, n=6, t=4)
    rng = np.random.default_rng(5)
    junk = [s.replace(values=np.where(s.mask, s.values, rng.normal(size=s.values.shape) * 1e3)) for s in seqs]
    broken = []
    for arch in sorted(ARCHITECTURES):
        results = []
        for data in (seqs, junk):
            model = mini_model(arch, 1)
            batch = model.make_batch(data)
            value, grads = loss_and_grads(model, batch, noise_seed=3)(model.state())
            out = model.predict_proba(batch).tobytes() + model.features(batch).tobytes()
            results.append((value, {k: g.tobytes() for k, g in grads.items()}, out))
        if results[0] != results[1]:
            broken.append(arch)
    methods = dict(HEURISTICS, model=ModelImputer(mini_model("vrnn_nn")))
    for name, method in methods.items():
        a = [method(s).values.tobytes() for s in seqs]
        b = [method(s).values.tobytes() for s in junk]
        if a != b:
            broken.append(name)
    detail = f"{len(ARCHITECTURES)} models, {len(methods)} imputers; " + (
        "violations: " + ", ".join(broken) if broken else "no bit changed")
    verdict(3, "masking contract", not broken, detail)


def test_4_metric_oracles(verdict):
    micro, macro, weighted, _ = f1_scores(PredictionSet(onehot_probs([0, 1, 1, 2], 3), [0, 0, 1, 2]))
    f1_ok = abs(micro - 0.75) <= 1e-12 and abs(macro - 7 / 9) <= 1e-12 and abs(weighted - 0.75) <= 1e-12
    rng = np.random.default_rng(0)
    auc_ok = True
    for k in range(200):
        n = int(rng.integers(2, 51))
        labels = rng.random(n) < 0.5
        labels[0], labels[-1] = True, False
        scores = rng.integers(0, 5, size=n) / 4 if k % 2 else rng.random(n)
        auc_ok &= binary_auc(scores, labels) == brute_force_auc(scores, labels)
    labels = rng.integers(0, 4, size=400)
    blind = evaluate_predictions(PredictionSet(np.full((400, 4), 0.25), labels))
    blind_ok = blind.micro_auc == blind.macro_auc == blind.macro_auc_w == 0.5
    blind_ok &= all(r.auc == 0.5 for r in blind.per_class)
    verdict(4, "metric oracles", f1_ok and auc_ok and blind_ok,
            f"F1 fixture {f1_ok}, 200 AUC fixtures {auc_ok}, blind AUC 0.5 {blind_ok}")


# ---------------------------------------------------------------------------
# trend criteria on the default synthetic dataset


class Runs:
    def __init__(self):
        self.seqs = synth_generate(SynthConfig(), 0)
        self.splits = {s: prepare_split(self.seqs, s)[0] for s in SPLIT_SEEDS}
        self.models = {}
        self.seconds = {}

    def model(self, arch, split_seed, unsupervised=False):
        key = (arch, split_seed, unsupervised)
        if key not in self.models:
            start = time.perf_counter()
            cfg = RunConfig(model=arch, seed=split_seed, split_seed=split_seed,
                            disc_weight=0.0 if unsupervised else 1.0)
            sp = self.splits[split_seed]
            self.models[key] = (fit(cfg, sp.train, sp.dev)[0], cfg)
            self.seconds[key] = time.perf_counter() - start
        return self.models[key]

    def time_of(self, keys):
        return sum(self.seconds[k] for k in keys)


@pytest.fixture(scope="session")
def runs():
    return Runs()


def test_5_imputation_ordering(runs, verdict):
    model, _ = runs.model("vrnn_nn", 0)
    start = time.perf_counter()
    methods = dict(HEURISTICS, model=ModelImputer(model))
    table = evaluate_imputation(runs.splits[0].test, methods, rate=0.10, seeds=(1, 2, 3, 4, 5), reference="zero")
    elapsed = runs.seconds["vrnn_nn", 0, False] + time.perf_counter() - start
    mean = {m: table.mean(m) for m in methods}
    p_vs_zero = {c["comparison"].split(" vs. ")[1]: c["p"] for c in table.comparisons}
    order = (mean["model"] < mean["last&next"] < min(mean["row mean"], mean["NOCB"])
             and max(mean["row mean"], mean["NOCB"]) < mean["zero"])
    sig = p_vs_zero["model"] < 0.05 and p_vs_zero["last&next"] < 0.05
    ok = order and sig and elapsed < 600
    detail = ", ".join(f"{m} {v:.3f}" for m, v in mean.items())
    detail += f"; p(model vs zero) {p_vs_zero['model']:.2g}, p(last&next vs zero) {p_vs_zero['last&next']:.2g}"
    verdict(5, "imputation ordering", ok, detail + f"; {elapsed:.0f}s")


def test_6_diagnosis_trend(runs, verdict):
    archs = ("nn", "rnn_nn", "vrnn_nn")
    f1 = {a: [evaluate(runs.model(a, s)[0], runs.splits[s].test).macro_f1 for s in SPLIT_SEEDS] for a in archs}
    elapsed = runs.time_of([(a, s, False) for a in archs for s in SPLIT_SEEDS])
    mean = {a: float(np.mean(v)) for a, v in f1.items()}
    res = paired_t_test(f1["vrnn_nn"], f1["nn"])
    ok = mean["vrnn_nn"] >= mean["rnn_nn"] >= mean["nn"] and res.t > 0 and res.p < 0.05 and elapsed < 1800
    detail = ", ".join(f"{a} {m:.3f}" for a, m in mean.items())
    verdict(6, "diagnosis trend", ok, detail + f"; vrnn_nn vs nn p {res.p:.2g}; {elapsed:.0f}s training")


def test_7_feature_transfer(runs, verdict):
    wins = {}
    scores = {}
    for arch in ("vae_nn", "vrnn_nn"):
        wins[arch] = 0
        for s in SPLIT_SEEDS:
            sp = runs.splits[s]
            pair = []
            for unsupervised in (False, True):
                model, cfg = runs.model(arch, s, unsupervised)
                pair.append(feature_transfer(model, sp.train, sp.dev, sp.test, cfg)[0].macro_f1)
            scores[arch, s] = pair
            wins[arch] += pair[0] > pair[1]
    ok = all(w >= 4 for w in wins.values())
    detail = "; ".join(f"{a} joint wins {w}/5 ("
                       + ", ".join(f"{scores[a, s][0]:.3f}>{scores[a, s][1]:.3f}" for s in SPLIT_SEEDS) + ")"
                       for a, w in wins.items())
    verdict(7, "feature transfer", ok, detail)


# ---------------------------------------------------------------------------


def _cli_session(root: Path) -> list[bytes]:
    root.mkdir()
    cwd = os.getcwd()
    os.chdir(root)
    try:
        (root / "ev.csv").write_text("episode_id,patient_id,day,test_id,value\n"
                                     "e1,p,0,0,1.0\ne1,p,2,1,HIGH\ne1,p,2,0,2.5\ne2,q,1,0,3.0\ne2,q,4,0,2.0\n")
        (root / "lab.csv").write_text("episode_id,label\ne1,1\ne2,0\n")
        (root / "schema.yaml").write_text("n_tests: 2\ncategorical:\n  1: {LOW: 0, HIGH: 1}\n")
        tiny = ["--hidden-dim", "8", "--latent-dim", "4", "--max-epochs", "2"]
        commands = [
            ["synth", "--out", "ds", "--n-episodes", "120", "--seed", "3"],
            ["ingest", "--events", "ev.csv", "--labels", "lab.csv", "--schema", "schema.yaml", "--out", "ing"],
            ["train", "--data", "ds", "--model", "vrnn_nn", *tiny, "--out", "v.npz"],
            ["train", "--data", "ds", "--model", "nn", *tiny, "--out", "n.npz"],
            ["evaluate", "--checkpoint", "v.npz", "--out", "ev_v"],
            ["evaluate", "--checkpoint", "n.npz", "--out", "ev_n"],
            ["features", "--checkpoint", "v.npz", "--out", "ft"],
            ["impute", "--checkpoint", "v.npz", "--seeds", "1,2", "--out", "im"],
            ["report", "ev_v.json", "ev_n.json", "ft.json", "--out", "rep"],
        ]
        for argv in commands:
            assert main(argv) == 0, argv
        return [(p.relative_to(root).as_posix(), p.read_bytes()) for p in sorted(root.rglob("*")) if p.is_file()]
    finally:
        os.chdir(cwd)


def test_8_cli_determinism(tmp_path, verdict):
    first = _cli_session(tmp_path / "a")
    second = _cli_session(tmp_path / "b")
    differing = [a[0] for a, b in zip(first, second) if a != b]
    ok = not differing and [a[0] for a in first] == [b[0] for b in second]
    verdict(8, "determinism", ok, f"{len(first)} artifacts from 7 commands" +
            (f"; differing: {differing}" if differing else ", all byte-identical"))


def test_9_t_test_oracle(verdict):
    res = paired_t_test([2, 4, 6, 8, 10], [0, 0, 0, 0, 0])
    ok = abs(res.p - 0.0132) <= 1e-4 and res.stars == "*"
    verdict(9, "t-test oracle", ok, f"t {res.t:.4f}, p {res.p:.5f}, stars {res.stars!r}")
