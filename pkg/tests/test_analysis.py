import csv

import numpy as np
import pytest

from tdcn.analysis import (
    ArchSummary,
    LayerRow,
    causal_receptive_field,
    conv_flops,
    flops_comparison,
    linear_flops,
    matched_tcn_config,
    model_summary,
    render_text,
    write_summary_csv,
)
from tdcn.model import BranchConfig, Model, ModelConfig


def tiny_config(**overrides):
    defaults = dict(
        branches=[
            BranchConfig(cue="landmarks2d", input_dim=3, widths=(4, 4, 4, 4, 4)),
            BranchConfig(cue="pose", input_dim=2, widths=(4, 4, 4, 4, 4)),
        ],
        sequence_length=32,
        classifier_dims=(8, 4, 2),
        attention_reduction=2,
    )
    defaults.update(overrides)
    return ModelConfig(**defaults)


class TestReceptiveField:
    def test_causal_three_layer_stack(self):
        assert causal_receptive_field(3, [1, 2, 4]) == 15

    def test_single_conv(self):
        assert causal_receptive_field(3, [1]) == 3

    def test_pooling_enlarges_span(self):
        cfg = tiny_config(branches=[BranchConfig(cue="pose", input_dim=2, widths=(4, 4, 4, 4, 4))])
        rows = model_summary(cfg).rows
        block1 = next(r for r in rows if r.name == "pose.block1")
        pool1 = next(r for r in rows if r.name == "pose.pool1")
        assert pool1.receptive_field > block1.receptive_field

    def test_non_decreasing_along_each_branch(self):
        for cfg in (ModelConfig.default(), tiny_config(), matched_tcn_config(tiny_config())):
            rows = model_summary(cfg).rows
            for cue in cfg.cues:
                branch_rows = [r for r in rows if r.name.startswith(f"{cue}.")]
                rfs = [r.receptive_field for r in branch_rows]
                assert rfs == sorted(rfs)

    def test_dcb_uses_widest_path(self):
        # path dilations (2, 4) with k=3 span 12 extra frames at stride 1
        cfg = tiny_config(branches=[BranchConfig(cue="pose", input_dim=2, widths=(4, 4, 4, 4, 4))])
        rows = model_summary(cfg).rows
        assert rows[0].receptive_field == 1 + 12


class TestFlops:
    def test_single_conv_convention(self):
        assert conv_flops(4, 3, 1, 1) == 24

    def test_linear_convention(self):
        assert linear_flops(128, 2) == 512

    def test_totals_equal_sum_of_rows(self):
        summary = model_summary(ModelConfig.default())
        assert summary.total_flops == sum(r.flops for r in summary.rows)
        assert summary.total_params == sum(r.params for r in summary.rows)

    def test_default_model_cheaper_than_matched_causal_stack(self):
        comparison = flops_comparison(ModelConfig.default())
        assert comparison["tdcn_cheaper"]
        assert comparison["tcn_width"] == 256

    def test_landmarks_branch_cheaper_than_matched_causal_stack(self):
        cfg = ModelConfig.default(cues=("landmarks2d",))
        assert cfg.branches[0].input_dim == 136
        comparison = flops_comparison(cfg)
        assert comparison["tdcn_flops"] < comparison["tcn_flops"]
        # both sides land in the same order of magnitude (billions)
        assert 1e9 < comparison["tdcn_flops"] < 1e11
        assert 1e9 < comparison["tcn_flops"] < 1e11


class TestParameterCounts:
    @pytest.mark.parametrize(
        "config",
        [
            tiny_config(),
            tiny_config(use_attention=False),
            tiny_config(backbone="tcn"),
            ModelConfig.default(),
        ],
        ids=["tiny", "no-attention", "tcn", "default"],
    )
    def test_analyzer_matches_runtime_exactly(self, config):
        summary = model_summary(config)
        model = Model(config, seed=0)
        assert summary.total_params == model.num_parameters()


class TestShapeSchedule:
    def test_output_lengths_halve_with_floor(self):
        cfg = ModelConfig.default(cues=("landmarks2d",))
        rows = model_summary(cfg).rows
        lengths = [r.output_length for r in rows if r.name.startswith("landmarks2d.pool")]
        assert lengths == [2500, 1250, 625, 312]
        blocks = [r.output_length for r in rows if r.name.startswith("landmarks2d.block")]
        assert blocks == [5000, 2500, 1250, 625, 312]

    def test_matched_tcn_keeps_full_length(self):
        cfg = matched_tcn_config(tiny_config())
        rows = model_summary(cfg).rows
        conv_rows = [r for r in rows if ".layer" in r.name]
        assert all(r.output_length == 32 for r in conv_rows)
        last = [r for r in rows if r.name.endswith("last_step")]
        assert all(r.output_length == 1 for r in last)
        assert conv_rows[-1].receptive_field >= 32


class TestRendering:
    def test_text_table_has_all_rows_and_total(self):
        summary = model_summary(tiny_config())
        text = render_text(summary, title="tiny")
        assert text.startswith("tiny")
        for row in summary.rows:
            assert row.name in text
        assert "total" in text

    def test_csv_roundtrip(self, tmp_path):
        summary = model_summary(tiny_config())
        path = tmp_path / "summary.csv"
        write_summary_csv(summary, path)
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["layer", "output_length", "receptive_field", "params", "flops"]
        assert len(rows) == len(summary.rows) + 2
        assert rows[-1][0] == "total"
        assert int(rows[-1][3]) == summary.total_params

    def test_summary_dataclass_totals(self):
        rows = [LayerRow("a", 4, 3, 10, 100), LayerRow("b", 2, 5, 20, 200)]
        s = ArchSummary(rows=rows)
        assert s.total_params == 30
        assert s.total_flops == 300
