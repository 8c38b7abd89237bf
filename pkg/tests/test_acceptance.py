"""Acceptance suite: one test per criterion, each printing a pass line.

The training-based criteria run small synthetic experiments with settings
frozen here (sequence lengths, amplitudes, seeds, epochs).  Every
comparison trains all candidate models under an identical protocol and
evaluates final-epoch weights on a held-out validation split.

Run with ``pytest tests/test_acceptance.py -v -s``.
"""

import csv
import itertools
import json
import time

import numpy as np
import pytest
import yaml

from tdcn.analysis import flops_comparison, model_summary
from tdcn.cli import main as cli_main
from tdcn.data import SyntheticSpec, assign_splits, generate_synthetic_dataset
from tdcn.gradcheck import check_gradients
from tdcn.layers import (
    avg_pool1d,
    batch_norm,
    conv1d,
    elu,
    global_avg_pool,
    init_batch_norm,
    init_conv,
    init_linear,
    linear,
    max_pool1d,
    relu,
    scale_channels,
    sigmoid,
    softmax,
)
from tdcn.model import BranchConfig, Model, ModelConfig
from tdcn.tensor import Tensor, mul, tensor_sum
from tdcn.training import (
    AVERAGE,
    HEAD_FIRST,
    ConfusionCounts,
    TrainConfig,
    compute_metrics,
    cross_entropy,
    evaluate,
    train,
)

GRAD_TOL = 1e-4
SEEDS = (0, 1, 2)


def ok(line: str) -> None:
    print(f"\n[PASS] {line}")


def split_subjects(spec: SyntheticSpec, fractions) -> dict:
    subjects = generate_synthetic_dataset(spec)
    assignment = assign_splits(subjects, seed=spec.seed, fractions=fractions)
    splits = {"train": [], "validation": [], "test": []}
    for s in subjects:
        splits[assignment[s.subject_id]].append(s)
    return splits


def train_and_score(splits, cues, seed, dims, T, widths=(8, 8, 4, 4, 4), cls=(16, 8, 2),
                    lr=5e-3, epochs=30, use_attention=True, backbone="tdcn", tcn_width=None,
                    strategy=HEAD_FIRST):
    """Identical protocol for every compared model: train, then evaluate the
    final-epoch weights on the validation split."""
    branches = [BranchConfig(cue=c, input_dim=dims[c], widths=widths) for c in cues]
    config = ModelConfig(
        branches=branches,
        sequence_length=T,
        classifier_dims=cls,
        attention_reduction=2,
        use_attention=use_attention,
        backbone=backbone,
        tcn_width=tcn_width,
    )
    model = Model(config, seed=seed)
    cfg = TrainConfig(learning_rate=lr, momentum=0.9, batch_size=8, epochs=epochs, seed=seed)
    _, stats = train(model, {"train": splits["train"], "validation": []}, cfg)
    _, metrics = evaluate(model, splits["validation"], strategy, stats)
    return metrics


# ---------------------------------------------------------------------------
# criterion 1: gradient suite


def test_criterion_01_gradient_suite():
    started = time.time()
    rng = np.random.default_rng(7)

    def quad(t):
        return tensor_sum(mul(t, t))

    worst = 0.0

    def check(name, loss_fn, named):
        nonlocal worst
        errors = check_gradients(loss_fn, named)
        worst = max(worst, max(errors.values()))
        assert max(errors.values()) < GRAD_TOL, f"{name}: {errors}"

    # every layer op, random inputs in [-1, 1]
    x = Tensor(rng.uniform(-1, 1, (2, 10, 3)), requires_grad=True)
    for dilation in (1, 2, 4):
        p = init_conv(rng, 3, 2, 3, dilation=dilation)
        check(f"conv_d{dilation}", lambda: quad(conv1d(x, p)), [("x", x), ("w", p.weight), ("b", p.bias)])
    pc = init_conv(rng, 3, 2, 3, dilation=2)
    check("conv_causal", lambda: quad(conv1d(x, pc, causal=True)), [("x", x), ("w", pc.weight)])
    p1 = init_conv(rng, 3, 2, 1)
    check("conv_k1", lambda: quad(conv1d(x, p1)), [("x", x), ("w", p1.weight)])
    for name, act in (("elu", elu), ("relu", relu), ("sigmoid", sigmoid), ("softmax", softmax)):
        check(name, lambda act=act: quad(act(x)), [("x", x)])
    check("max_pool", lambda: quad(max_pool1d(x)), [("x", x)])
    check("avg_pool", lambda: quad(avg_pool1d(x)), [("x", x)])
    bn = init_batch_norm(3)
    bn.running_mean[:] = rng.uniform(-0.3, 0.3, 3)
    bn.running_var[:] = rng.uniform(0.5, 1.5, 3)
    check("batch_norm_train", lambda: quad(batch_norm(x, bn, True)), [("x", x), ("s", bn.scale), ("b", bn.shift)])
    check("batch_norm_eval", lambda: quad(batch_norm(x, bn, False)), [("x", x), ("s", bn.scale)])
    xf = Tensor(rng.uniform(-1, 1, (4, 5)), requires_grad=True)
    pl = init_linear(rng, 5, 3)
    check("linear", lambda: quad(linear(xf, pl)), [("x", xf), ("w", pl.weight), ("b", pl.bias)])
    check("global_avg_pool", lambda: quad(global_avg_pool(x)), [("x", x)])
    h = Tensor(rng.uniform(0.1, 0.9, (2, 3)), requires_grad=True)
    check("scale_channels", lambda: quad(scale_channels(x, h)), [("x", x), ("h", h)])

    # full two-branch model: T=32, widths {4,4,4,4,4}, reduction 2
    config = ModelConfig(
        branches=[
            BranchConfig(cue="landmarks2d", input_dim=3, widths=(4, 4, 4, 4, 4)),
            BranchConfig(cue="pose", input_dim=2, widths=(4, 4, 4, 4, 4)),
        ],
        sequence_length=32,
        classifier_dims=(8, 4, 2),
        attention_reduction=2,
    )
    model = Model(config, seed=11)
    inputs = {
        "landmarks2d": rng.uniform(-1, 1, (2, 32, 3)),
        "pose": rng.uniform(-1, 1, (2, 32, 2)),
    }
    labels = np.array([1, 0])
    errors = check_gradients(
        lambda: cross_entropy(model.forward(inputs, training=True), labels),
        model.parameters(),
    )
    worst = max(worst, max(errors.values()))
    assert max(errors.values()) < GRAD_TOL
    elapsed = time.time() - started
    assert elapsed < 60.0, f"gradient suite took {elapsed:.1f}s"
    ok(f"criterion 1: gradient suite, worst relative error {worst:.2e} in {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# criterion 2: metric oracle


def test_criterion_02_metric_oracle():
    target = {"accuracy": 0.857, "recall": 0.917, "precision": 0.733, "f1": 0.815}
    matches = []
    for tp, tn, fp in itertools.product(range(36), repeat=3):
        fn = 35 - tp - tn - fp
        if fn < 0:
            continue
        m = compute_metrics(ConfusionCounts(tp=tp, tn=tn, fp=fp, fn=fn))
        if (
            abs(m.accuracy - target["accuracy"]) <= 1e-3
            and abs(m.recall - target["recall"]) <= 1e-3
            and abs(m.precision - target["precision"]) <= 1e-3
            and abs(m.f1 - target["f1"]) <= 1e-3
        ):
            matches.append((tp, tn, fp, fn))
    assert matches == [(11, 19, 4, 1)], f"counts realizing the metrics: {matches}"
    m = compute_metrics(ConfusionCounts(tp=11, tn=19, fp=4, fn=1))
    for key, value in target.items():
        assert abs(getattr(m, key) - value) <= 1e-3
    ok("criterion 2: (11, 19, 4, 1) uniquely realizes the published validation metrics")


# ---------------------------------------------------------------------------
# criterion 3: shape schedule


def test_criterion_03_shape_schedule():
    config = ModelConfig.default()
    assert config.output_steps == 312
    summary = model_summary(config)
    for cue in ("landmarks2d", "pose"):
        pools = [r.output_length for r in summary.rows if r.name.startswith(f"{cue}.pool")]
        assert pools == [2500, 1250, 625, 312]
    assert {b.widths[-1] for b in config.branches} == {64}

    # one real forward at full published scale
    model = Model(config, seed=0)
    rng = np.random.default_rng(0)
    from tdcn.model import tdcn_forward

    branch_out = tdcn_forward(Tensor(rng.normal(size=(5000, 6))), model.branches["pose"])
    assert branch_out.shape == (312, 64)
    probs = model.forward(
        {"landmarks2d": rng.normal(size=(5000, 136)), "pose": rng.normal(size=(5000, 6))}
    )
    assert probs.shape == (2,)
    assert abs(probs.data.sum() - 1.0) < 1e-12
    ok("criterion 3: 5000 -> 2500 -> 1250 -> 625 -> 312 steps, final widths 64/64")


# ---------------------------------------------------------------------------
# criterion 4: overfit oracle


def test_criterion_04_overfit_oracle():
    started = time.time()
    spec = SyntheticSpec(
        subjects_per_class=8,
        sequence_length=1000,
        cue_dims={"landmarks2d": 12, "pose": 6},
        seed=42,
        amplitude=2.5,
        period=250.0,
        informative_fraction=1.0,
    )
    subjects = generate_synthetic_dataset(spec)
    config = ModelConfig(
        branches=[
            BranchConfig(cue="landmarks2d", input_dim=12, widths=(16, 16, 8, 4, 4)),
            BranchConfig(cue="pose", input_dim=6, widths=(16, 16, 8, 4, 4)),
        ],
        sequence_length=1000,
    )
    model = Model(config, seed=0)
    cfg = TrainConfig(learning_rate=3e-3, momentum=0.9, batch_size=8, epochs=60, seed=0)
    logs, _ = train(model, {"train": subjects, "validation": []}, cfg)
    first_perfect = next((e.epoch for e in logs if e.train_acc == 1.0), None)
    elapsed = time.time() - started
    assert first_perfect is not None and first_perfect <= 200
    assert elapsed < 300.0, f"overfit run took {elapsed:.0f}s"
    ok(f"criterion 4: 100% train accuracy at epoch {first_perfect} in {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# criteria 5 and 6 share the split-signal experiments


SPLIT_SIGNAL_T = 1000
SPLIT_SIGNAL_DIMS = {"landmarks2d": 8, "pose": 8}


@pytest.fixture(scope="module")
def split_signal_runs():
    runs = {}
    for seed in SEEDS:
        spec = SyntheticSpec(
            subjects_per_class=18,
            sequence_length=SPLIT_SIGNAL_T,
            cue_dims=SPLIT_SIGNAL_DIMS,
            seed=100 + seed,
            amplitude=3.0,
            period=500.0,
            informative_fraction=1.0,
            mode="split-signal",
        )
        splits = split_subjects(spec, fractions=(2 / 3, 1 / 3, 0.0))
        assert len(splits["train"]) == 24 and len(splits["validation"]) == 12
        common = dict(dims=SPLIT_SIGNAL_DIMS, T=SPLIT_SIGNAL_T, seed=seed)
        runs[seed] = {
            "fused": train_and_score(splits, ["landmarks2d", "pose"], **common).f1,
            "single_a": train_and_score(splits, ["landmarks2d"], **common).f1,
            "single_b": train_and_score(splits, ["pose"], **common).f1,
            "plain_concat": train_and_score(
                splits, ["landmarks2d", "pose"], use_attention=False, **common
            ).f1,
        }
    return runs


def test_criterion_05_fusion_beats_single_branches(split_signal_runs):
    gaps = []
    for seed in SEEDS:
        r = split_signal_runs[seed]
        gaps.append(r["fused"] - max(r["single_a"], r["single_b"]))
    mean_gap = float(np.mean(gaps))
    assert mean_gap >= 0.1, f"per-seed gaps {gaps}, mean {mean_gap:.3f}"
    ok(
        "criterion 5: fused F1 beats best single branch by "
        f"{mean_gap:+.3f} on average (per-seed {[f'{g:+.2f}' for g in gaps]})"
    )


def test_criterion_06_attention_ablation(split_signal_runs):
    holds = sum(split_signal_runs[s]["fused"] >= split_signal_runs[s]["plain_concat"] for s in SEEDS)
    assert holds >= 2, {s: split_signal_runs[s] for s in SEEDS}
    ok(f"criterion 6: attention >= plain concatenation on {holds}/3 seeds")


# ---------------------------------------------------------------------------
# criterion 7: backbone ablation on the long-period task


def test_criterion_07_backbone_ablation():
    dims = {"landmarks2d": 6, "pose": 6}
    holds = 0
    scores = []
    for seed in SEEDS:
        spec = SyntheticSpec(
            subjects_per_class=18,
            sequence_length=2500,
            cue_dims=dims,
            seed=200 + seed,
            amplitude=3.0,
            period=2000.0,
            informative_fraction=1.0,
        )
        splits = split_subjects(spec, fractions=(2 / 3, 1 / 3, 0.0))
        f1_tdcn = train_and_score(splits, ["landmarks2d", "pose"], seed, dims, 2500, epochs=25).f1
        f1_tcn = train_and_score(
            splits, ["landmarks2d", "pose"], seed, dims, 2500, epochs=25,
            backbone="tcn", tcn_width=8,
        ).f1
        scores.append((f1_tdcn, f1_tcn))
        holds += f1_tcn <= f1_tdcn
    assert holds >= 2, scores
    ok(f"criterion 7: causal baseline <= dilated branches on {holds}/3 seeds {scores}")


# ---------------------------------------------------------------------------
# criterion 8: resampling strategies


def test_criterion_08_resampling_strategies():
    dims = {"landmarks2d": 6, "pose": 6}

    def run(signal_span):
        spec = SyntheticSpec(
            subjects_per_class=8,
            sequence_length=15000,
            cue_dims=dims,
            seed=77,
            amplitude=3.0,
            period=1000.0,
            informative_fraction=1.0,
            signal_span=signal_span,
        )
        splits = split_subjects(spec, fractions=(0.625, 0.375, 0.0))
        branches = [BranchConfig(cue=c, input_dim=6, widths=(8, 8, 4, 4, 4)) for c in dims]
        config = ModelConfig(
            branches=branches, sequence_length=5000, classifier_dims=(16, 8, 2), attention_reduction=2
        )
        model = Model(config, seed=0)
        cfg = TrainConfig(learning_rate=5e-3, momentum=0.9, batch_size=8, epochs=20, seed=0)
        _, stats = train(model, {"train": splits["train"], "validation": []}, cfg)
        _, head = evaluate(model, splits["validation"], HEAD_FIRST, stats)
        _, avg = evaluate(model, splits["validation"], AVERAGE, stats)
        return head.f1, avg.f1

    head_windowed, avg_windowed = run(signal_span=(0, 5000))
    assert head_windowed >= avg_windowed, (head_windowed, avg_windowed)

    head_uniform, avg_uniform = run(signal_span=None)
    assert abs(head_uniform - avg_uniform) <= 0.05, (head_uniform, avg_uniform)
    ok(
        "criterion 8: head-first >= average on front-loaded signal "
        f"({head_windowed:.2f} vs {avg_windowed:.2f}); strategies agree on uniform signal "
        f"({head_uniform:.2f} vs {avg_uniform:.2f})"
    )


# ---------------------------------------------------------------------------
# criterion 9: analyzer properties


def test_criterion_09_analyzer_properties():
    landmarks = ModelConfig.default(cues=("landmarks2d",))
    assert landmarks.sequence_length == 5000
    assert landmarks.branches[0].input_dim == 136
    comparison = flops_comparison(landmarks)
    assert comparison["tdcn_flops"] < comparison["tcn_flops"], comparison

    for config in (landmarks, ModelConfig.default()):
        summary = model_summary(config)
        model = Model(config, seed=0)
        assert summary.total_params == model.num_parameters()
    ok(
        "criterion 9: dilated network needs "
        f"{comparison['tdcn_flops'] / 1e9:.1f}G FLOPs vs {comparison['tcn_flops'] / 1e9:.1f}G "
        "for the receptive-field-matched causal stack; parameter totals match runtime exactly"
    )


# ---------------------------------------------------------------------------
# criterion 10: end-to-end determinism through the command line


def test_criterion_10_cli_determinism(tmp_path):
    config = {
        "model": {
            "cues": ["landmarks2d", "pose"],
            "widths": {"landmarks2d": [4, 4, 4, 4, 4], "pose": [4, 4, 4, 4, 4]},
            "sequence_length": 64,
            "classifier_dims": [8, 4, 2],
            "attention_reduction": 2,
        },
        "train": {"learning_rate": 0.005, "momentum": 0.9, "batch_size": 8, "epochs": 5, "seed": 3},
        "data": {"root": str(tmp_path / "dataset")},
        "synth": {
            "subjects_per_class": 8,
            "sequence_length": 64,
            "cue_dims": {"landmarks2d": 3, "pose": 2},
            "amplitude": 3.0,
            "period": 16.0,
            "informative_fraction": 1.0,
            "seed": 1,
            "split_fractions": [0.5, 0.5, 0.0],
        },
    }
    cfg_path = tmp_path / "run.yaml"
    cfg_path.write_text(yaml.safe_dump(config))
    assert cli_main(["synth-data", "--config", str(cfg_path)]) == 0
    assert cli_main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "r1")]) == 0
    assert cli_main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "r2")]) == 0
    ckpt_a = (tmp_path / "r1" / "checkpoint.bin").read_bytes()
    ckpt_b = (tmp_path / "r2" / "checkpoint.bin").read_bytes()
    log_a = (tmp_path / "r1" / "training_log.csv").read_bytes()
    log_b = (tmp_path / "r2" / "training_log.csv").read_bytes()
    assert ckpt_a == ckpt_b
    assert log_a == log_b
    ok(f"criterion 10: repeated cmd-train runs byte-identical ({len(ckpt_a)}-byte checkpoints)")
