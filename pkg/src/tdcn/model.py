"""Two-branch sequence classifier: dilated-convolution branches, channel
attention fusion, and a fully connected head.

A branch stacks five dilated convolutional blocks (DCB) with a stride-2
max pool after each of the first four, so a length-T input leaves the
branch with floor(T/16) steps.  Each DCB runs two parallel dilated paths
(dilations 1->2 and 2->4), joins them by summation and ELU, adds a
kernel-1 convolution shortcut, and batch-normalizes everywhere except the
final block.  Branch outputs are concatenated channel-wise, rescaled by a
squeeze/excitation-style attention over channels, flattened and classified
by three linear layers with a terminal softmax.

A causal temporal-convolution baseline with the same outer interface is
included for backbone ablations: a plain stack of causal dilated
convolutions whose last-time-step features feed the same fusion and head.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import layers
from .layers import (
    BatchNormParams,
    Conv1DParams,
    LinearParams,
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
from .tensor import Tensor, concat_last, register_op, reshape

__all__ = [
    "DCBConfig",
    "BranchConfig",
    "ModelConfig",
    "Model",
    "DCBParams",
    "CheckpointError",
    "dcb_forward",
    "tdcn_forward",
    "fwa_forward",
    "classifier_forward",
    "tcn_forward",
    "tcn_layers_for_length",
    "save_checkpoint",
    "load_checkpoint",
    "KERNEL_SIZE",
    "NUM_BLOCKS",
    "NUM_POOLS",
]

KERNEL_SIZE = 3
NUM_BLOCKS = 5
NUM_POOLS = 4
PATH_A_DILATIONS = (1, 2)
PATH_B_DILATIONS = (2, 4)

# Architecture defaults for the two standard visual cues.
DEFAULT_BRANCH_WIDTHS = {
    "landmarks2d": (256, 256, 128, 64, 64),
    "pose": (128, 64, 256, 128, 64),
}


class CheckpointError(RuntimeError):
    """Raised when a checkpoint cannot be read or does not match a config."""


@dataclass
class DCBConfig:
    """One dilated convolutional block: two parallel paths plus a shortcut."""

    in_channels: int
    out_channels: int
    path_a_dilations: tuple[int, ...] = PATH_A_DILATIONS
    path_b_dilations: tuple[int, ...] = PATH_B_DILATIONS
    use_batch_norm: bool = True

    def __post_init__(self):
        for name, dils in (("path_a", self.path_a_dilations), ("path_b", self.path_b_dilations)):
            if not dils:
                raise ValueError(f"{name}: needs at least one dilation")
            for prev, cur in zip(dils, dils[1:]):
                if cur != 2 * prev:
                    raise ValueError(f"{name}: dilations {dils} must double at each step")
        covered = set(self.path_a_dilations) | set(self.path_b_dilations)
        if not {1, 2, 4} <= covered:
            raise ValueError(f"paths cover dilations {sorted(covered)}, need 1, 2 and 4")


@dataclass
class BranchConfig:
    """One input cue: its name, feature dimension and per-block widths."""

    cue: str
    input_dim: int
    widths: tuple[int, ...]

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) != NUM_BLOCKS:
            raise ValueError(
                f"branch '{self.cue}': expected {NUM_BLOCKS} channel widths, got {len(self.widths)}"
            )
        if self.input_dim < 1 or any(w < 1 for w in self.widths):
            raise ValueError(f"branch '{self.cue}': dims must be positive")


@dataclass
class ModelConfig:
    """Complete architecture description.

    Branches are kept in canonical (lexicographic by cue name) order so
    that channel concatenation is reproducible regardless of how the
    config was written.
    """

    branches: list[BranchConfig]
    sequence_length: int = 5000
    classifier_dims: tuple[int, ...] = (256, 32, 2)
    attention_reduction: int = 4
    pooling: str = "max"
    use_attention: bool = True
    backbone: str = "tdcn"
    tcn_width: Optional[int] = None

    def __post_init__(self):
        if not self.branches:
            raise ValueError("config needs at least one branch")
        self.branches = sorted(self.branches, key=lambda b: b.cue)
        if len({b.cue for b in self.branches}) != len(self.branches):
            raise ValueError("duplicate cue names in branches")
        self.classifier_dims = tuple(int(d) for d in self.classifier_dims)
        if self.classifier_dims[-1] != 2:
            raise ValueError(f"classifier dims {self.classifier_dims} must end in 2")
        final_widths = {b.widths[-1] for b in self.branches}
        if len(final_widths) != 1:
            raise ValueError(
                f"branches must share a final width for concatenation, got {sorted(final_widths)}"
            )
        if self.attention_reduction < 1:
            raise ValueError("attention reduction must be >= 1")
        if self.pooling not in ("max", "average"):
            raise ValueError(f"pooling must be 'max' or 'average', got {self.pooling!r}")
        if self.backbone not in ("tdcn", "tcn"):
            raise ValueError(f"backbone must be 'tdcn' or 'tcn', got {self.backbone!r}")
        if self.backbone == "tdcn" and self.sequence_length < 2**NUM_POOLS:
            raise ValueError(
                f"sequence length {self.sequence_length} too short for {NUM_POOLS} halvings"
            )

    @property
    def cues(self) -> list[str]:
        return [b.cue for b in self.branches]

    @property
    def fused_width(self) -> int:
        """Concatenated channel count across branch outputs."""
        return sum(self.branch_output_width(b) for b in self.branches)

    def branch_output_width(self, branch: BranchConfig) -> int:
        if self.backbone == "tcn":
            return self.tcn_width if self.tcn_width is not None else branch.widths[-1]
        return branch.widths[-1]

    @property
    def output_steps(self) -> int:
        """Time steps left after the branch (1 for the causal baseline)."""
        if self.backbone == "tcn":
            return 1
        length = self.sequence_length
        for _ in range(NUM_POOLS):
            length //= 2
        return length

    def to_dict(self) -> dict:
        return {
            "branches": [
                {"cue": b.cue, "input_dim": b.input_dim, "widths": list(b.widths)}
                for b in self.branches
            ],
            "sequence_length": self.sequence_length,
            "classifier_dims": list(self.classifier_dims),
            "attention_reduction": self.attention_reduction,
            "pooling": self.pooling,
            "use_attention": self.use_attention,
            "backbone": self.backbone,
            "tcn_width": self.tcn_width,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            branches=[
                BranchConfig(cue=b["cue"], input_dim=int(b["input_dim"]), widths=tuple(b["widths"]))
                for b in d["branches"]
            ],
            sequence_length=int(d["sequence_length"]),
            classifier_dims=tuple(d["classifier_dims"]),
            attention_reduction=int(d["attention_reduction"]),
            pooling=d["pooling"],
            use_attention=bool(d["use_attention"]),
            backbone=d.get("backbone", "tdcn"),
            tcn_width=d.get("tcn_width"),
        )

    @classmethod
    def default(cls, cues: Sequence[str] = ("landmarks2d", "pose"), **overrides) -> "ModelConfig":
        from .data import cue_dim, default_schema

        schema = overrides.pop("schema", None) or default_schema()
        branches = [
            BranchConfig(
                cue=c,
                input_dim=cue_dim(c, schema),
                widths=DEFAULT_BRANCH_WIDTHS.get(c, DEFAULT_BRANCH_WIDTHS["pose"]),
            )
            for c in cues
        ]
        return cls(branches=branches, **overrides)


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class DCBParams:
    path_a: list[Conv1DParams]
    path_b: list[Conv1DParams]
    shortcut: Conv1DParams
    bn: Optional[BatchNormParams]


@dataclass
class BranchParams:
    blocks: list[DCBParams] = field(default_factory=list)


@dataclass
class FWAParams:
    reduce: LinearParams
    expand: LinearParams


@dataclass
class ClassifierParams:
    fcs: list[LinearParams] = field(default_factory=list)


@dataclass
class TCNBranchParams:
    convs: list[Conv1DParams] = field(default_factory=list)


def init_dcb(rng: np.random.Generator, cfg: DCBConfig) -> DCBParams:
    def make_path(dilations: tuple[int, ...]) -> list[Conv1DParams]:
        convs = []
        cin = cfg.in_channels
        for d in dilations:
            convs.append(init_conv(rng, cin, cfg.out_channels, KERNEL_SIZE, dilation=d))
            cin = cfg.out_channels
        return convs

    return DCBParams(
        path_a=make_path(cfg.path_a_dilations),
        path_b=make_path(cfg.path_b_dilations),
        shortcut=init_conv(rng, cfg.in_channels, cfg.out_channels, 1, dilation=1),
        bn=init_batch_norm(cfg.out_channels) if cfg.use_batch_norm else None,
    )


def branch_block_configs(branch: BranchConfig) -> list[DCBConfig]:
    """The five DCB configs of a branch; batch norm everywhere but the last."""
    configs = []
    cin = branch.input_dim
    for i, width in enumerate(branch.widths):
        configs.append(
            DCBConfig(in_channels=cin, out_channels=width, use_batch_norm=i < NUM_BLOCKS - 1)
        )
        cin = width
    return configs


def tcn_layers_for_length(length: int, kernel_size: int = KERNEL_SIZE) -> list[int]:
    """Doubling dilations 1, 2, 4, ... until the causal receptive field covers ``length``."""
    dilations = [1]
    rf = 1 + (kernel_size - 1) * 1
    while rf < length:
        dilations.append(dilations[-1] * 2)
        rf += (kernel_size - 1) * dilations[-1]
    return dilations


# ---------------------------------------------------------------------------
# forward passes


def dcb_forward(x: Tensor, params: DCBParams, training: bool = False) -> Tensor:
    """Parallel dilated paths, ELU-joined, shortcut added, then batch norm."""
    a = x
    for conv in params.path_a:
        a = elu(conv1d(a, conv))
    b = x
    for conv in params.path_b:
        b = elu(conv1d(b, conv))
    out = elu(a + b) + conv1d(x, params.shortcut)
    if params.bn is not None:
        out = batch_norm(out, params.bn, training)
    return out


def tdcn_forward(x: Tensor, branch: BranchParams, pooling: str = "max", training: bool = False) -> Tensor:
    """Five DCBs interleaved with four stride-2 pools: (T, D) -> (floor(T/16), C5)."""
    length = x.shape[-2]
    if length < 2**NUM_POOLS:
        raise ValueError(f"branch input length {length} must be >= {2 ** NUM_POOLS}")
    pool = max_pool1d if pooling == "max" else avg_pool1d
    h = x
    for i, block in enumerate(branch.blocks):
        h = dcb_forward(h, block, training)
        if i < NUM_POOLS:
            h = pool(h)
    return h


def fwa_forward(x: Tensor, params: FWAParams) -> Tensor:
    """Channel attention: squeeze over time, two linear layers, sigmoid gate."""
    s = global_avg_pool(x)
    h = sigmoid(linear(relu(linear(s, params.reduce)), params.expand))
    return scale_channels(x, h)


def classifier_forward(x: Tensor, params: ClassifierParams) -> Tensor:
    """Flatten time and channels, three linear layers, softmax probabilities."""
    if x.data.ndim == 3:
        h = reshape(x, (x.shape[0], x.shape[1] * x.shape[2]))
    else:
        h = reshape(x, (x.data.size,))
    h = elu(linear(h, params.fcs[0]))
    h = elu(linear(h, params.fcs[1]))
    return softmax(linear(h, params.fcs[2]))


def last_time_step(x: Tensor) -> Tensor:
    """Select the final time step: (T, C) -> (C,) or (B, T, C) -> (B, C)."""
    xd = x.data
    out = xd[..., -1, :]

    def backward(g: np.ndarray):
        dx = np.zeros_like(xd)
        dx[..., -1, :] = g
        return (dx,)

    return register_op(out.copy(), (x,), backward, "last_step")


def tcn_forward(x: Tensor, branch: TCNBranchParams) -> Tensor:
    """Causal dilated stack returning the last time step's features."""
    h = x
    for conv in branch.convs:
        h = elu(conv1d(h, conv, causal=True))
    return last_time_step(h)


# ---------------------------------------------------------------------------
# full model


class Model:
    """The assembled network: one branch per cue, fusion, classifier.

    Accepts per-cue inputs shaped (T, D) for a single sequence or
    (B, T, D) for a batch and returns class probabilities shaped (2,) or
    (B, 2).  Construction is deterministic in (config, seed).
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        self.branches: dict[str, BranchParams | TCNBranchParams] = {}
        for branch_cfg in config.branches:
            if config.backbone == "tcn":
                width = config.branch_output_width(branch_cfg)
                convs = []
                cin = branch_cfg.input_dim
                for d in tcn_layers_for_length(config.sequence_length):
                    convs.append(init_conv(rng, cin, width, KERNEL_SIZE, dilation=d))
                    cin = width
                self.branches[branch_cfg.cue] = TCNBranchParams(convs=convs)
            else:
                self.branches[branch_cfg.cue] = BranchParams(
                    blocks=[init_dcb(rng, c) for c in branch_block_configs(branch_cfg)]
                )
        fused = config.fused_width
        if config.use_attention:
            hidden = max(1, fused // config.attention_reduction)
            self.fwa: Optional[FWAParams] = FWAParams(
                reduce=init_linear(rng, fused, hidden),
                expand=init_linear(rng, hidden, fused),
            )
        else:
            self.fwa = None
        dims = [config.output_steps * fused, *config.classifier_dims]
        self.classifier = ClassifierParams(
            fcs=[init_linear(rng, dims[i], dims[i + 1]) for i in range(len(dims) - 1)]
        )

    def forward(self, inputs: dict, training: bool = False) -> Tensor:
        feats = []
        for branch_cfg in self.config.branches:
            cue = branch_cfg.cue
            if cue not in inputs:
                raise ValueError(f"missing input for branch '{cue}'")
            x = inputs[cue]
            if not isinstance(x, Tensor):
                x = Tensor(x)
            if x.shape[-1] != branch_cfg.input_dim:
                raise ValueError(
                    f"branch '{cue}': input has {x.shape[-1]} features, expected {branch_cfg.input_dim}"
                )
            params = self.branches[cue]
            if self.config.backbone == "tcn":
                y = tcn_forward(x, params)
                # keep a singleton time axis so fusion and head are shared
                y = reshape(y, y.shape[:-1] + (1, y.shape[-1]))
            else:
                y = tdcn_forward(x, params, self.config.pooling, training)
            feats.append(y)
        fused = feats[0] if len(feats) == 1 else concat_last(*feats)
        if self.fwa is not None:
            fused = fwa_forward(fused, self.fwa)
        return classifier_forward(fused, self.classifier)

    def __call__(self, inputs: dict, training: bool = False) -> Tensor:
        return self.forward(inputs, training)

    # ------------------------------------------------------------------
    # parameter bookkeeping

    def parameters(self) -> list[tuple[str, Tensor]]:
        """Trainable tensors in declaration order."""
        out: list[tuple[str, Tensor]] = []
        for branch_cfg in self.config.branches:
            prefix = f"branch.{branch_cfg.cue}"
            params = self.branches[branch_cfg.cue]
            if isinstance(params, TCNBranchParams):
                for i, conv in enumerate(params.convs):
                    out.append((f"{prefix}.layer{i}.weight", conv.weight))
                    out.append((f"{prefix}.layer{i}.bias", conv.bias))
                continue
            for i, block in enumerate(params.blocks):
                for path_name, path in (("path_a", block.path_a), ("path_b", block.path_b)):
                    for j, conv in enumerate(path):
                        out.append((f"{prefix}.block{i}.{path_name}{j}.weight", conv.weight))
                        out.append((f"{prefix}.block{i}.{path_name}{j}.bias", conv.bias))
                out.append((f"{prefix}.block{i}.shortcut.weight", block.shortcut.weight))
                out.append((f"{prefix}.block{i}.shortcut.bias", block.shortcut.bias))
                if block.bn is not None:
                    out.append((f"{prefix}.block{i}.bn.scale", block.bn.scale))
                    out.append((f"{prefix}.block{i}.bn.shift", block.bn.shift))
        if self.fwa is not None:
            out.append(("fwa.reduce.weight", self.fwa.reduce.weight))
            out.append(("fwa.reduce.bias", self.fwa.reduce.bias))
            out.append(("fwa.expand.weight", self.fwa.expand.weight))
            out.append(("fwa.expand.bias", self.fwa.expand.bias))
        for i, fc in enumerate(self.classifier.fcs):
            out.append((f"classifier.fc{i}.weight", fc.weight))
            out.append((f"classifier.fc{i}.bias", fc.bias))
        return out

    def num_parameters(self) -> int:
        return sum(t.size for _, t in self.parameters())

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        """All persistent arrays (trainable params plus running statistics)."""
        out: list[tuple[str, np.ndarray]] = [(n, t.data) for n, t in self.parameters()]
        for branch_cfg in self.config.branches:
            params = self.branches[branch_cfg.cue]
            if not isinstance(params, BranchParams):
                continue
            for i, block in enumerate(params.blocks):
                if block.bn is not None:
                    prefix = f"branch.{branch_cfg.cue}.block{i}.bn"
                    out.append((f"{prefix}.running_mean", block.bn.running_mean))
                    out.append((f"{prefix}.running_var", block.bn.running_var))
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        own = self.state_arrays()
        own_names = [n for n, _ in own]
        if set(own_names) != set(arrays):
            missing = sorted(set(own_names) - set(arrays))
            extra = sorted(set(arrays) - set(own_names))
            raise CheckpointError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, target in own:
            src = arrays[name]
            if src.shape != target.shape:
                raise CheckpointError(
                    f"tensor '{name}': checkpoint shape {src.shape} != model shape {target.shape}"
                )
            target[...] = src


# ---------------------------------------------------------------------------
# checkpoint container

CHECKPOINT_MAGIC = b"TDCN"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, model: Model, extra_arrays: Optional[dict[str, np.ndarray]] = None) -> None:
    """Versioned binary container: header with the config, then named tensors.

    ``extra_arrays`` (for example normalization statistics) are appended
    after the model state, sorted by name.  Writing the same parameters
    always produces identical bytes.
    """
    config_blob = json.dumps(model.config.to_dict(), sort_keys=True, separators=(",", ":")).encode()
    arrays = model.state_arrays()
    if extra_arrays:
        arrays = arrays + [(n, np.asarray(extra_arrays[n])) for n in sorted(extra_arrays)]
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(config_blob)))
        fh.write(config_blob)
        fh.write(struct.pack("<Q", len(arrays)))
        for name, arr in arrays:
            blob = name.encode()
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"not a checkpoint file: bad magic {magic!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (cfg_len,) = struct.unpack("<Q", fh.read(8))
        config = ModelConfig.from_dict(json.loads(fh.read(cfg_len).decode()))
        (count,) = struct.unpack("<Q", fh.read(8))
        arrays: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<Q", fh.read(8))
            name = fh.read(name_len).decode()
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
            size = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * size), dtype="<f8").reshape(shape)
            arrays[name] = data.astype(np.float64)
    return config, arrays


def model_from_checkpoint(path, expected: Optional[ModelConfig] = None) -> tuple[Model, dict[str, np.ndarray]]:
    """Rebuild a model from a checkpoint, optionally enforcing a config match.

    Returns the model plus any extra arrays stored alongside its state.
    """
    config, arrays = load_checkpoint(path)
    if expected is not None and expected.to_dict() != config.to_dict():
        raise CheckpointError(
            "checkpoint config does not match the run config: "
            f"checkpoint {config.to_dict()} vs config {expected.to_dict()}"
        )
    model = Model(config, seed=0)
    own_names = {name for name, _ in model.state_arrays()}
    model.load_state_arrays({n: a for n, a in arrays.items() if n in own_names})
    extras = {n: a for n, a in arrays.items() if n not in own_names}
    return model, extras
