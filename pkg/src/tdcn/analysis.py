"""Static architecture analysis: per-stage receptive field, trainable
parameter counts and FLOPs for the dilated-branch network and the causal
baseline.

Conventions (fixed so reports are reproducible):

- one multiply-accumulate = 2 FLOPs, so a convolution over L output steps
  costs 2 * L * k * Cin * Cout and a linear map 2 * in * out;
- pooling, activations and other elementwise stages cost length * channels;
- batch normalization costs 2 * length * channels (normalize + affine);
- a stride-2 pool is treated as a kernel-2, dilation-1 aggregation for
  receptive-field accounting: it widens the span by the current input
  stride and doubles it afterwards;
- stages that aggregate the whole sequence (channel attention, the
  classifier head) report the full input length as their receptive field.

Parameter counts follow the runtime model exactly; the equality is
asserted in tests against instantiated models.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Optional

from .model import (
    KERNEL_SIZE,
    NUM_POOLS,
    BranchConfig,
    ModelConfig,
    branch_block_configs,
    tcn_layers_for_length,
)

__all__ = [
    "LayerRow",
    "ArchSummary",
    "model_summary",
    "matched_tcn_config",
    "flops_comparison",
    "causal_receptive_field",
    "render_text",
    "write_summary_csv",
]


@dataclass
class LayerRow:
    name: str
    output_length: int
    receptive_field: int
    params: int
    flops: int


@dataclass
class ArchSummary:
    rows: list[LayerRow]

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_flops(self) -> int:
        return sum(r.flops for r in self.rows)


def causal_receptive_field(kernel_size: int, dilations: list[int]) -> int:
    """Frames seen by the last output of a causal dilated stack."""
    return 1 + (kernel_size - 1) * sum(dilations)


def conv_flops(length: int, kernel_size: int, cin: int, cout: int) -> int:
    return 2 * length * kernel_size * cin * cout


def conv_params(kernel_size: int, cin: int, cout: int) -> int:
    return kernel_size * cin * cout + cout


def linear_flops(in_dim: int, out_dim: int) -> int:
    return 2 * in_dim * out_dim


def linear_params(in_dim: int, out_dim: int) -> int:
    return in_dim * out_dim + out_dim


def _dcb_rows(branch: BranchConfig, cue: str, length: int) -> tuple[list[LayerRow], int, int]:
    """Rows for one dilated branch; returns (rows, final_length, final_rf)."""
    rows: list[LayerRow] = []
    rf = 1
    jump = 1  # input frames per step at the current resolution
    k = KERNEL_SIZE
    for i, block in enumerate(branch_block_configs(branch)):
        cin, cout = block.in_channels, block.out_channels
        flops = 0
        params = 0
        for dilations in (block.path_a_dilations, block.path_b_dilations):
            path_cin = cin
            for _ in dilations:
                flops += conv_flops(length, k, path_cin, cout) + length * cout  # conv + ELU
                params += conv_params(k, path_cin, cout)
                path_cin = cout
        flops += conv_flops(length, 1, cin, cout)  # shortcut
        params += conv_params(1, cin, cout)
        flops += 3 * length * cout  # path sum, post-sum ELU, residual add
        if block.use_batch_norm:
            flops += 2 * length * cout
            params += 2 * cout
        grow_a = (k - 1) * sum(block.path_a_dilations) * jump
        grow_b = (k - 1) * sum(block.path_b_dilations) * jump
        rf += max(grow_a, grow_b)
        rows.append(LayerRow(f"{cue}.block{i + 1}", length, rf, params, flops))
        if i < NUM_POOLS:
            flops = length * cout
            rf += jump
            jump *= 2
            length //= 2
            rows.append(LayerRow(f"{cue}.pool{i + 1}", length, rf, 0, flops))
    return rows, length, rf


def _tcn_rows(
    branch: BranchConfig, cue: str, length: int, width: int
) -> tuple[list[LayerRow], int, int]:
    rows: list[LayerRow] = []
    rf = 1
    k = KERNEL_SIZE
    cin = branch.input_dim
    for i, dilation in enumerate(tcn_layers_for_length(length)):
        flops = conv_flops(length, k, cin, width) + length * width
        params = conv_params(k, cin, width)
        rf += (k - 1) * dilation
        rows.append(LayerRow(f"{cue}.layer{i}", length, rf, params, flops))
        cin = width
    rows.append(LayerRow(f"{cue}.last_step", 1, rf, 0, 0))
    return rows, 1, rf


def model_summary(config: ModelConfig) -> ArchSummary:
    """Per-stage analysis of the full configured model."""
    rows: list[LayerRow] = []
    length = config.sequence_length
    out_len = config.output_steps
    for branch in config.branches:
        if config.backbone == "tcn":
            width = config.branch_output_width(branch)
            branch_rows, _, _ = _tcn_rows(branch, branch.cue, length, width)
        else:
            branch_rows, _, _ = _dcb_rows(branch, branch.cue, length)
        rows.extend(branch_rows)
    fused = config.fused_width
    if config.use_attention:
        hidden = max(1, fused // config.attention_reduction)
        flops = (
            out_len * fused  # squeeze (temporal mean)
            + linear_flops(fused, hidden)
            + hidden  # ReLU
            + linear_flops(hidden, fused)
            + fused  # sigmoid
            + out_len * fused  # channel rescale
        )
        params = linear_params(fused, hidden) + linear_params(hidden, fused)
        rows.append(LayerRow("fusion.attention", out_len, length, params, flops))
    else:
        rows.append(LayerRow("fusion.concat", out_len, length, 0, 0))
    dims = [out_len * fused, *config.classifier_dims]
    for i in range(len(dims) - 1):
        flops = linear_flops(dims[i], dims[i + 1]) + dims[i + 1]  # linear + ELU/softmax
        rows.append(LayerRow(f"head.fc{i}", 1, length, linear_params(dims[i], dims[i + 1]), flops))
    return ArchSummary(rows=rows)


def matched_tcn_config(config: ModelConfig, width: Optional[int] = None) -> ModelConfig:
    """Causal baseline matched to a dilated-branch config.

    Receptive field: enough doubling-dilation layers to cover the whole
    sequence from the last step.  Width: the branch stack has no pooling
    and a single constant width, so by default it is matched to the widest
    stage of the dilated branches it replaces.
    """
    if width is None:
        width = max(max(b.widths) for b in config.branches)
    return replace(config, backbone="tcn", tcn_width=width)


def flops_comparison(config: ModelConfig, tcn_width: Optional[int] = None) -> dict:
    """Totals for the configured model versus the matched causal baseline."""
    own = model_summary(config)
    baseline_cfg = matched_tcn_config(config, tcn_width)
    baseline = model_summary(baseline_cfg)
    return {
        "tdcn_flops": own.total_flops,
        "tcn_flops": baseline.total_flops,
        "tdcn_params": own.total_params,
        "tcn_params": baseline.total_params,
        "tcn_width": baseline_cfg.tcn_width,
        "tdcn_cheaper": own.total_flops < baseline.total_flops,
    }


def render_text(summary: ArchSummary, title: str = "architecture") -> str:
    headers = ("layer", "out_len", "rf", "params", "flops")
    table = [headers] + [
        (r.name, str(r.output_length), str(r.receptive_field), str(r.params), str(r.flops))
        for r in summary.rows
    ]
    table.append(("total", "", "", str(summary.total_params), str(summary.total_flops)))
    widths = [max(len(row[i]) for row in table) for i in range(len(headers))]
    lines = [title]
    for j, row in enumerate(table):
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
        if j == 0 or j == len(table) - 2:
            lines.append("-" * (sum(widths) + 2 * (len(widths) - 1)))
    return "\n".join(lines)


def write_summary_csv(summary: ArchSummary, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer", "output_length", "receptive_field", "params", "flops"])
        for r in summary.rows:
            writer.writerow([r.name, r.output_length, r.receptive_field, r.params, r.flops])
        writer.writerow(["total", "", "", summary.total_params, summary.total_flops])
