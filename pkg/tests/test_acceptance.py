"""Acceptance gate: one test per criterion, each tagged with the criterion marker.

Run alone with ``pytest tests/test_acceptance.py``; the terminal summary then
prints one PASS/FAIL line per criterion.
"""
import itertools
import struct
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from artifact import gradcheck
from artifact.errors import FormatError
from artifact.io.config import Config
from artifact.io.formats import ClipSet, CloudSet, decode_clips, decode_clouds, encode_clips, encode_clouds
from artifact.model.blocks import AdapterConfig, block_forward, init_backbone_block, init_pva, init_sce, reference_block
from artifact.model.embed import EmbedderConfig, build_neighborhoods
from artifact.model.network import ModelConfig, build_model, forward, head_param_names
from artifact.model.params import ParamStore, count_params
from artifact.numcore.rng import RngState
from artifact.ot import DiscreteMeasure, marginal_violation, sinkhorn, exact_ot, wasserstein_1d
from artifact.otdd import LabeledEmbeddingSet, class_weights, otdd_class_weighted_stochastic, otdd_exact
from artifact.pipeline.ablation import toggle_overrides
from artifact.pipeline.experiment import frozen_unchanged, run_experiment
from artifact.pipeline.metrics import fmt
from conftest import TINY

GOLDEN = Path(__file__).parent / "golden" / "stage1_otdd_seed0.txt"
U = DiscreteMeasure.uniform
criterion = pytest.mark.criterion


def labeled_set(rng, sizes, width=3, shift=0.0):
    feats = np.concatenate([rng.normal(shift + 1.5 * c, 1.0, size=(n, width)) for c, n in enumerate(sizes)])
    return LabeledEmbeddingSet(feats, np.repeat(np.arange(len(sizes)), sizes), len(sizes))


def enumerate_optimum(c):
    n = c.shape[0]
    return min(sum(c[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n))) / n


@pytest.fixture(scope="module")
def default_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("default_run")
    start = time.perf_counter()
    result = run_experiment(Config(), 0, out_dir=out)
    return result, time.perf_counter() - start


# optimal transport ---------------------------------------------------------------

@criterion(1, "Sinkhorn feasibility on 100 random 16x16 instances within 5 s")
def test_c01_sinkhorn_feasibility():
    rng = np.random.default_rng(101)
    costs = [rng.random((16, 16)) for _ in range(100)]
    start = time.perf_counter()
    plans = [sinkhorn(c, U(16), U(16), epsilon=0.1) for c in costs]
    elapsed = time.perf_counter() - start
    assert all(tp.converged for tp in plans)
    worst = max(tp.info["raw_violation"] for tp in plans)
    rounded = max(marginal_violation(tp.plan, U(16).weights, U(16).weights) for tp in plans)
    assert worst <= 1e-6 and rounded <= 1e-6, (worst, rounded)
    assert elapsed <= 5.0, f"{elapsed:.2f} s"


@criterion(2, "Sinkhorn at eps=1e-3 within 1% of the enumerated optimum")
def test_c02_sinkhorn_vs_exact(quiet_ot):
    rng = np.random.default_rng(202)
    for trial in range(50):
        n = int(rng.integers(2, 7))
        c = rng.random((n, n))
        exact = enumerate_optimum(c)
        got = sinkhorn(c, U(n), U(n), epsilon=1e-3).cost_value
        assert got >= exact - 1e-9, (trial, got, exact)
        assert abs(got - exact) <= 0.01 * exact, (trial, got, exact)


@criterion(3, "1-D Wasserstein closed form agrees with exact OT")
def test_c03_wasserstein_1d():
    rng = np.random.default_rng(303)
    for trial in range(50):
        n, p = int(rng.integers(1, 7)), float(rng.choice([1, 2, 3]))
        x, y = np.sort(rng.normal(size=n)), np.sort(rng.normal(size=n))
        exact = exact_ot(np.abs(x[:, None] - y[None]) ** p, U(n), U(n)).cost_value ** (1 / p)
        assert abs(wasserstein_1d(x, y, p) - exact) <= 1e-9, trial


# dataset distance ----------------------------------------------------------------

@criterion(4, "OTDD self-distance with exact solvers is zero")
def test_c04_otdd_self_distance():
    rng = np.random.default_rng(404)
    for _ in range(20):
        k = int(rng.integers(1, 4))
        sizes = rng.multinomial(int(rng.integers(k, 9)) - k, np.ones(k) / k) + 1
        d = labeled_set(rng, sizes)
        assert len(d) <= 8
        assert otdd_exact(d, d, epsilon=0.0, inner="exact", inner_epsilon=0.0) <= 1e-9


@criterion(5, "Class-weighted stochastic estimate collapses to the per-class OTDD")
def test_c05_stochastic_collapse():
    rng = np.random.default_rng(505)
    for trial in range(20):
        dyn = labeled_set(rng, rng.integers(1, 7, size=int(rng.integers(1, 4))))
        stat = labeled_set(rng, rng.integers(1, 6, size=int(rng.integers(1, 4))), shift=0.3)
        b = int(np.bincount(dyn.labels).max()) + int(rng.integers(0, 3))
        est = otdd_class_weighted_stochastic(dyn, stat, b=b, R=1, rng=RngState(trial))
        w = class_weights(dyn.labels, dyn.num_classes)
        want = sum(w[i] * otdd_exact(dyn.single_class(i), stat) for i in range(dyn.num_classes))
        assert abs(est.d - want) <= 1e-9, trial


@criterion(6, "More rounds do not increase the spread of the estimate")
def test_c06_variance_reduction():
    rng = np.random.default_rng(606)
    dyn, stat = labeled_set(rng, (40, 40, 40), width=4), labeled_set(rng, (30, 30), width=4, shift=0.7)

    def spread(rounds):
        return np.std([otdd_class_weighted_stochastic(dyn, stat, b=8, R=rounds, rng=RngState(s)).d
                       for s in range(20)])
    one, sixteen = spread(1), spread(16)
    assert sixteen <= one, (sixteen, one)


# model ---------------------------------------------------------------------------

@criterion(7, "Central-difference gradient checks on every primitive")
def test_c07_gradient_checks():
    results = gradcheck.run_suite()
    names = {r.name for r in results}
    for required in ("matmul", "attention", "layer_norm", "dwsep_conv", "pva", "sce", "block_bypass",
                     "cross_entropy"):
        assert required in names
    assert len(results) == len(gradcheck.CHECKS) * 10
    bad = [(r.name, r.seed, r.max_rel_error) for r in results if not r.passed]
    assert not bad, bad
    assert gradcheck.STEP == 1e-5 and gradcheck.TOLERANCE == 1e-4


@criterion(8, "Zero-initialised adapters reproduce the frozen network")
def test_c08_zero_init_identity():
    cfg = ModelConfig(num_classes=4)
    assert cfg.adapter.placement == "bypass" and cfg.adapter.zero_init_up
    params = build_model(cfg, RngState(8))
    store = ParamStore()
    acfg = AdapterConfig()
    init_backbone_block(store, 0, acfg.model_dim, RngState(1))
    init_pva(store, 0, acfg, RngState(2))
    init_sce(store, 0, acfg, RngState(3))
    rng = np.random.default_rng(808)
    worst = 0.0
    for i in range(20):
        clip = rng.normal(size=(1, 8, 64, 3))
        disp = build_neighborhoods(clip, cfg.embed, RngState(i))
        adapted = forward(disp, params, cfg).data
        frozen = forward(disp, params, cfg, adapted=False).data
        tokens = rng.normal(size=(4, 16, acfg.model_dim))
        block = block_forward(tokens, 0, store, 4, acfg).data - reference_block(tokens, store, 0, 4).data
        worst = max(worst, np.max(np.abs(adapted - frozen)), np.max(np.abs(block)))
    assert worst <= 1e-12, worst


# pipeline ------------------------------------------------------------------------

@criterion(9, "Full default run keeps frozen tensors byte-identical within 5 min")
def test_c09_freeze_invariant(default_run):
    result, seconds = default_run
    conf = result.config
    assert (conf["data.classes"], conf["data.per_class"], conf["data.frames"], conf["data.points"]) == (4, 32, 8, 128)
    assert (conf["embed.dim"], conf["adapter.r"], conf["model.depth"]) == (64, 16, 2)
    assert len(result.log.stage(1)) == 10 and len(result.log.stage(2)) == 40
    assert result.initial.frozen_names()
    assert frozen_unchanged(result.initial, result.params)
    assert seconds <= 300.0, f"{seconds:.1f} s"


@criterion(10, "Stage-1 OTDD descends and matches the golden trajectory")
def test_c10_stage1_descent(default_run):
    result, _ = default_run
    traj = result.log.otdd_trajectory()
    assert len(traj) == 10
    assert np.mean(traj[-3:]) < np.mean(traj[:3]), traj
    golden = GOLDEN.read_text().split()
    assert [fmt(v) for v in traj] == golden


ROTATION = {"data.task": "rotation", "data.classes": 2, "data.static_classes": 2, "data.per_class": 32,
            "data.test_per_class": 32, "embed.tube_length": 1, "data.noise": 0.0, "schedule.base_lr": 0.05}


@criterion(11, "Temporal adapter separates rotation direction; spatial-only model cannot")
def test_c11_temporal_separation():
    conf = Config(ROTATION)
    a1 = conf.updated(toggle_overrides("A1"))
    assert not a1["toggle.pva"]
    with_pva, without = [], []
    for seed in range(3):
        with_pva.append(run_experiment(conf, seed).log.final_test_acc)
        without.append(run_experiment(a1, seed).log.final_test_acc)
    assert np.median(with_pva) >= 0.9, with_pva
    assert np.median(without) <= 0.6, without


@criterion(12, "Logged learning rate equals the closed-form schedule")
def test_c12_schedule_exactness(default_run):
    result, _ = default_run
    conf = result.config
    base, warm = conf["schedule.base_lr"], conf["schedule.warmup_epochs"]
    assert (base, warm, conf["schedule.decay_epochs"], conf["schedule.decay_factor"]) == (0.01, 10, (20, 30), 0.1)
    for rec in result.log.stage(2):
        e = rec.epoch
        want = base * (e + 1) / warm if e < warm else base * 0.1 ** ((e >= 20) + (e >= 30))
        assert abs(rec.lr - want) <= 1e-15, (e, rec.lr, want)
    assert all(rec.lr == conf["schedule.stage1_lr"] for rec in result.log.stage(1))


@criterion(13, "Parameter accounting matches the closed form")
def test_c13_parameter_accounting():
    d, r, k, blocks = 384, 128, 3, 12
    acfg = AdapterConfig(model_dim=d, bottleneck=r, kernel=k, depth=blocks)
    adapters = ParamStore()
    for i in range(blocks):
        init_pva(adapters, i, acfg, RngState(i))
        init_sce(adapters, i, acfg, RngState(i))
    # by hand: PVA 49152 + 384 + 16384 + 49152, SCE 589824 + 1536 + 589824 + 384
    assert count_params(adapters)["trainable"] == 12 * (115072 + 1181568) == 15_559_680
    cfg = ModelConfig(num_classes=10, embed=EmbedderConfig(embed_dim=d), adapter=acfg, depth=blocks, heads=6)
    full = build_model(cfg, RngState(0))
    counts = count_params(full)
    assert set(full.trainable_names()) < set(full.names())
    assert counts["trainable"] + counts["frozen"] == counts["total"] and counts["trainable"] < counts["total"]
    pm = counts["per_module"]
    assert pm["pva"]["trainable"] + pm["sce"]["trainable"] == 15_559_680
    assert pm["backbone"]["trainable"] == 0 and pm["backbone"]["frozen"] == blocks * (12 * d * d + 13 * d)
    a0 = build_model(ModelConfig(num_classes=4).with_toggle("A0"), RngState(0))
    head = sum(a0[n].size for n in head_param_names(a0) if not a0.is_buffer(n))
    assert count_params(a0)["trainable"] == head == 64 * 4 + 4 + 2 * 64


@criterion(14, "Two CLI runs with the same config and seed are byte-identical")
def test_c14_end_to_end_determinism(tmp_path):
    conf = tmp_path / "run.txt"
    conf.write_text(Config(TINY).to_text())
    for name in ("a", "b"):
        proc = subprocess.run([sys.executable, "-m", "artifact.cli", "run", "--config", str(conf), "--seed", "7",
                               "--out", str(tmp_path / name)], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
    for f in ("metrics.jsonl", "checkpoint.ataw"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f


@criterion(15, "Container round trips are bit-exact and corrupt headers are rejected")
def test_c15_format_round_trip():
    rng = np.random.default_rng(1515)
    for i in range(100):
        n, p, k = int(rng.integers(0, 5)), int(rng.integers(1, 20)), int(rng.integers(1, 6))
        labels = rng.integers(0, k, size=n)
        if i % 2:
            t = int(rng.integers(1, 6))
            data = rng.normal(size=(n, t, p, 3)).astype(np.float32).astype(np.float64)
            back = decode_clips(encode_clips(ClipSet(data, labels, k)))
            stored = back.clips
        else:
            data = rng.normal(size=(n, p, 3)).astype(np.float32).astype(np.float64)
            back = decode_clouds(encode_clouds(CloudSet(data, labels, k)))
            stored = back.clouds
        assert stored.shape == data.shape and stored.tobytes() == data.tobytes()
        assert np.array_equal(back.labels, labels) and back.num_classes == k
    good = encode_clouds(CloudSet(rng.normal(size=(3, 5, 3)), [0, 1, 1], 2))
    patches = [(0, b"PC3X"), (0, b"PCV4"), (4, struct.pack("<H", 2)), (6, struct.pack("<I", 4)),
               (6, struct.pack("<I", 0)), (10, struct.pack("<I", 6)), (10, struct.pack("<I", 0)),
               (14, b"\x02"), (15, struct.pack("<I", 0)), (15, struct.pack("<I", 1)),
               (6, struct.pack("<I", 1 << 30)), (10, struct.pack("<I", 1 << 30)), (14, b"\xff"),
               (4, struct.pack("<H", 0)), (19, struct.pack("<I", 5))]
    corrupted = []
    for offset, patch in patches:
        bad = bytearray(good)
        bad[offset:offset + len(patch)] = patch
        corrupted.append(bytes(bad))
    corrupted += [good[:3], good[:18], good[:-1], good + b"\0", b""]
    assert len(corrupted) == 20
    for i, blob in enumerate(corrupted):
        with pytest.raises(FormatError):
            decode_clouds(blob)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
