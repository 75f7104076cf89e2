"""Backbone, classical->quantum interface, quantum layer, and fusion head.

The feature extractor is a small pre-activation residual CNN: stem conv,
stages of residual blocks (first block of each later stage downsamples by 2),
global average pooling. Batchnorm is replaced by per-channel learnable
affines, so a forward pass has no batch-coupled state; inputs are expected
already normalized to zero mean / unit variance (see data.normalize).

The hybrid head projects the d-dim feature vector to n encoding angles,
squashes them with pi*tanh into (-pi, pi), runs the quantum circuit per
sample, and classifies the concatenation [f, q] with a single linear layer
producing one logit. Disabling the quantum path replaces q by exact zeros,
which makes the classical ablation bitwise-comparable with a hybrid model
whose q-columns are zeroed.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import pqc
from .autodiff import Tensor
from .errors import ConfigError, StructureError, UsageError
from .pqc import PqcConfig, PqcParams


@dataclass(frozen=True)
class BackboneConfig:
    input_size: int = 64
    in_channels: int = 1
    stem_channels: int = 16
    stem_stride: int = 2
    stage_widths: tuple[int, ...] = (16, 32, 64)
    blocks_per_stage: tuple[int, ...] = (1, 1, 1)
    feature_dim: int = 64

    def __post_init__(self) -> None:
        object.__setattr__(self, "stage_widths", tuple(self.stage_widths))
        object.__setattr__(self, "blocks_per_stage", tuple(self.blocks_per_stage))
        if len(self.stage_widths) != len(self.blocks_per_stage):
            raise ConfigError("stage_widths and blocks_per_stage must have equal length")
        if not self.stage_widths or min(self.stage_widths) < 1 or min(self.blocks_per_stage) < 1:
            raise ConfigError("stage widths and block counts must be >= 1")
        if self.feature_dim != self.stage_widths[-1]:
            raise ConfigError(
                f"feature_dim {self.feature_dim} must equal last stage width {self.stage_widths[-1]}"
            )
        if self.stem_stride not in (1, 2):
            raise ConfigError("stem_stride must be 1 or 2")
        if self.input_size < 4 or self.in_channels < 1:
            raise ConfigError("input_size must be >= 4 and in_channels >= 1")


def _he_conv(rng: np.random.Generator, f: int, c: int, k: int) -> Tensor:
    std = np.sqrt(2.0 / (c * k * k))
    return Tensor(std * rng.standard_normal((f, c, k, k)), requires_grad=True)


class Affine:
    """Per-channel scale (init 1) and bias (init 0)."""

    def __init__(self, channels: int):
        self.scale = Tensor(np.ones(channels), requires_grad=True)
        self.bias = Tensor(np.zeros(channels), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.channel_affine(x, self.scale, self.bias)

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.scale": self.scale, f"{prefix}.bias": self.bias}


class ResidualBlock:
    """Pre-activation block: affine-relu-conv, affine-relu-conv, plus shortcut.

    With all conv weights zero the residual branch is exactly zero, so the
    block reduces to its shortcut (identity, or strided 1x1 projection).
    """

    def __init__(self, rng: np.random.Generator, in_c: int, out_c: int, stride: int):
        self.stride = stride
        self.affine_in = Affine(in_c)
        self.conv1 = _he_conv(rng, out_c, in_c, 3)
        self.affine_mid = Affine(out_c)
        self.conv2 = _he_conv(rng, out_c, out_c, 3)
        self.shortcut = None
        if stride != 1 or in_c != out_c:
            self.shortcut = _he_conv(rng, out_c, in_c, 1)

    def __call__(self, x: Tensor) -> Tensor:
        r = ad.relu(self.affine_in(x))
        r = ad.conv2d(r, self.conv1, stride=self.stride, padding=1)
        r = ad.relu(self.affine_mid(r))
        r = ad.conv2d(r, self.conv2, stride=1, padding=1)
        s = x if self.shortcut is None else ad.conv2d(x, self.shortcut, stride=self.stride)
        return ad.add(s, r)

    def params(self, prefix: str) -> dict[str, Tensor]:
        out = self.affine_in.params(f"{prefix}.affine_in")
        out[f"{prefix}.conv1.weight"] = self.conv1
        out.update(self.affine_mid.params(f"{prefix}.affine_mid"))
        out[f"{prefix}.conv2.weight"] = self.conv2
        if self.shortcut is not None:
            out[f"{prefix}.shortcut.weight"] = self.shortcut
        return out


class Backbone:
    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.stem_conv = _he_conv(rng, cfg.stem_channels, cfg.in_channels, 3)
        self.stem_affine = Affine(cfg.stem_channels)
        self.stages: list[list[ResidualBlock]] = []
        in_c = cfg.stem_channels
        for s, (width, n_blocks) in enumerate(zip(cfg.stage_widths, cfg.blocks_per_stage)):
            blocks = []
            for b in range(n_blocks):
                stride = 2 if (b == 0 and s > 0) else 1
                blocks.append(ResidualBlock(rng, in_c, width, stride))
                in_c = width
            self.stages.append(blocks)

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise StructureError(
                f"backbone expects [N,{self.cfg.in_channels},H,W], got {x.shape}"
            )
        h = ad.relu(self.stem_affine(ad.conv2d(x, self.stem_conv,
                                               stride=self.cfg.stem_stride, padding=1)))
        for blocks in self.stages:
            for block in blocks:
                h = block(h)
        return ad.global_avg_pool(h)

    def params(self) -> dict[str, Tensor]:
        out = {"stem.conv.weight": self.stem_conv}
        out.update(self.stem_affine.params("stem.affine"))
        for s, blocks in enumerate(self.stages):
            for b, block in enumerate(blocks):
                out.update(block.params(f"stage{s}.block{b}"))
        return out


def quantum_layer(z: Tensor, theta: Tensor, cfg: PqcConfig, threads: int = 1) -> Tensor:
    """Per-sample quantum feature map as a tape op.

    Forward runs the circuit once per row of z; the backward pass uses the
    parameter-shift gradients, summing theta contributions over the batch.
    Thread fan-out is per sample with a fixed-order reduction, so results do
    not depend on scheduling.
    """
    if z.data.ndim != 2 or z.shape[1] != cfg.n_qubits:
        raise StructureError(f"quantum_layer expects [N,{cfg.n_qubits}] angles, got {z.shape}")
    zd = z.data
    params = PqcParams(theta.data)
    n_samples = z.shape[0]

    def run(fn, *args_per_sample):
        if threads > 1 and n_samples > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                return list(pool.map(fn, *args_per_sample))
        return [fn(*a) for a in zip(*args_per_sample)]

    q = np.stack(run(lambda i: pqc.forward(zd[i], params, cfg).q, range(n_samples)))

    def vjp(g):
        pairs = run(
            lambda i: (pqc.grad_inputs(zd[i], params, cfg, g[i]),
                       pqc.grad_params(zd[i], params, cfg, g[i])),
            range(n_samples),
        )
        dz = np.stack([p[0] for p in pairs])
        dtheta = np.zeros_like(theta.data)
        for _, dt in pairs:
            dtheta += dt
        return (dz, dtheta)

    return ad.from_op(q, (z, theta), vjp, "quantum")


class HybridModel:
    """backbone -> projection -> pi*tanh -> quantum circuit -> [f, q] -> logit."""

    def __init__(self, backbone_cfg: BackboneConfig, pqc_cfg: PqcConfig,
                 rng: np.random.Generator, threads: int = 1):
        self.backbone_cfg = backbone_cfg
        self.pqc_cfg = pqc_cfg
        self.threads = threads
        d, n = backbone_cfg.feature_dim, pqc_cfg.n_qubits
        self.backbone = Backbone(backbone_cfg, rng)
        self.proj_w = Tensor(rng.standard_normal((n, d)) / np.sqrt(d), requires_grad=True)
        self.proj_b = Tensor(np.zeros(n), requires_grad=True)
        self.theta = Tensor(PqcParams.random(pqc_cfg, rng).theta, requires_grad=True)
        self.head_w = Tensor(rng.standard_normal((1, d + n)) / np.sqrt(d + n), requires_grad=True)
        self.head_b = Tensor(np.zeros(1), requires_grad=True)
        # instrumentation: running range of angles fed to the circuit
        self.angle_min = np.inf
        self.angle_max = -np.inf

    # forward pieces ---------------------------------------------------------

    def features(self, x: Tensor) -> Tensor:
        return self.backbone(x)

    def project(self, f: Tensor) -> Tensor:
        return ad.linear(f, self.proj_w, self.proj_b)

    def squash_angles(self, z: Tensor) -> Tensor:
        return ad.scale(ad.tanh(z), np.pi)

    def quantum_features(self, f: Tensor) -> Tensor:
        a = self.squash_angles(self.project(f))
        self.angle_min = min(self.angle_min, float(a.data.min()))
        self.angle_max = max(self.angle_max, float(a.data.max()))
        return quantum_layer(a, self.theta, self.pqc_cfg, threads=self.threads)

    def forward(self, x: Tensor, quantum: bool = True) -> Tensor:
        f = self.features(x)
        if quantum:
            q = self.quantum_features(f)
        else:
            q = Tensor(np.zeros((f.shape[0], self.pqc_cfg.n_qubits)))
        logit = ad.linear(ad.concat(f, q), self.head_w, self.head_b)
        return ad.reshape(logit, (f.shape[0],))

    def __call__(self, x: Tensor, quantum: bool = True) -> Tensor:
        return self.forward(x, quantum=quantum)

    def reset_angle_range(self) -> None:
        self.angle_min, self.angle_max = np.inf, -np.inf

    # parameter registry -----------------------------------------------------

    def parameters(self) -> dict[str, Tensor]:
        out = self.backbone.params()
        out["proj.weight"] = self.proj_w
        out["proj.bias"] = self.proj_b
        out["pqc.theta"] = self.theta
        out["head.weight"] = self.head_w
        out["head.bias"] = self.head_b
        return out

    def param_groups(self, mode: str = "hybrid") -> dict[str, dict[str, Tensor]]:
        """LR groups: the backbone vs everything trained at the faster rate.

        In classical mode the projection and circuit angles are off the tape
        entirely, so they are excluded rather than left with missing grads.
        """
        if mode not in ("hybrid", "classical"):
            raise UsageError(f"unknown mode {mode!r}")
        params = self.parameters()
        backbone = {k: v for k, v in params.items() if k.startswith(("stem.", "stage"))}
        fast = {k: v for k, v in params.items() if k not in backbone}
        if mode == "classical":
            fast = {k: v for k, v in fast.items() if k.startswith("head.")}
        return {"backbone": backbone, "quantum_and_head": fast}

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def freeze(self, group: str) -> None:
        for p in self.param_groups()[group].values():
            p.requires_grad = False

    # checkpoint io ----------------------------------------------------------

    def config_header(self) -> dict:
        return {
            "backbone": {
                "input_size": self.backbone_cfg.input_size,
                "in_channels": self.backbone_cfg.in_channels,
                "stem_channels": self.backbone_cfg.stem_channels,
                "stem_stride": self.backbone_cfg.stem_stride,
                "stage_widths": list(self.backbone_cfg.stage_widths),
                "blocks_per_stage": list(self.backbone_cfg.blocks_per_stage),
                "feature_dim": self.backbone_cfg.feature_dim,
            },
            "pqc": {
                "n_qubits": self.pqc_cfg.n_qubits,
                "depth": self.pqc_cfg.depth,
                "entangler": self.pqc_cfg.entangler,
                "reupload": self.pqc_cfg.reupload,
            },
        }

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.parameters().items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = sorted(set(params) - set(arrays))
        extra = sorted(set(arrays) - set(params))
        if missing or extra:
            raise StructureError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, p in params.items():
            if arrays[name].shape != p.data.shape:
                raise StructureError(
                    f"{name}: shape {arrays[name].shape} != expected {p.data.shape}"
                )
            p.data = arrays[name].astype(np.float64).copy()


def save_model(path, model: HybridModel, extra_header: dict | None = None) -> None:
    from . import checkpoint

    header = {"model": model.config_header()}
    if extra_header:
        header.update(extra_header)
    checkpoint.save(path, model.state_arrays(), header)


def model_from_checkpoint(path, threads: int = 1) -> tuple[HybridModel, dict]:
    """Rebuild a model from a checkpoint's embedded config, then load weights."""
    from . import checkpoint

    header, arrays = checkpoint.load(path)
    try:
        bc = BackboneConfig(**{k: tuple(v) if isinstance(v, list) else v
                               for k, v in header["model"]["backbone"].items()})
        pc = PqcConfig(**header["model"]["pqc"])
    except (KeyError, TypeError) as exc:
        raise StructureError(f"{path}: checkpoint header lacks a model config ({exc})")
    model = HybridModel(bc, pc, np.random.default_rng(0), threads=threads)
    model.load_state_arrays(arrays)
    return model, header


def check_architecture(stored: dict, expected: dict) -> None:
    """Field-by-field comparison of two config headers; names the mismatch."""
    for section in sorted(set(stored) | set(expected)):
        a, b = stored.get(section), expected.get(section)
        if isinstance(a, dict) and isinstance(b, dict):
            for key in sorted(set(a) | set(b)):
                if a.get(key) != b.get(key):
                    raise ConfigError(
                        f"architecture mismatch on {section}.{key}: "
                        f"checkpoint has {a.get(key)!r}, config wants {b.get(key)!r}"
                    )
        elif a != b:
            raise ConfigError(f"architecture mismatch on {section}: {a!r} vs {b!r}")


def tiny_model(seed: int = 7, threads: int = 1) -> tuple[HybridModel, BackboneConfig, PqcConfig]:
    """1-channel 8x8 input, d=8, n=2, L=1: small enough for full FD sweeps."""
    bc = BackboneConfig(input_size=8, in_channels=1, stem_channels=4, stem_stride=2,
                        stage_widths=(8,), blocks_per_stage=(1,), feature_dim=8)
    pc = PqcConfig(n_qubits=2, depth=1)
    from .rng import stream

    return HybridModel(bc, pc, stream(seed, "init"), threads=threads), bc, pc


def max_end_to_end_fd_deviation(seed: int = 7, batch: int = 2, rtol_floor: float = 1e-3) -> float:
    """Worst relative |tape grad - FD| over every parameter of the tiny model.

    Relative deviation uses max(|fd|, rtol_floor) in the denominator so that
    near-zero entries are held to an absolute bar instead of blowing up.

    All parameters get a small random jitter first: at the fresh init the
    affines are exactly (1, 0), which pipes relu outputs that are exactly 0
    into the next relu's kink, where central differences measure 1/2 against
    the subgradient's 0. The check must run at a generic point.
    """
    from .selfcheck import fd_gradient

    model, _, _ = tiny_model(seed=seed)
    rng = np.random.default_rng(seed + 1)
    for p in model.parameters().values():
        p.data = p.data + 0.05 * rng.standard_normal(p.data.shape)
    x = rng.standard_normal((batch, 1, 8, 8))
    y = rng.integers(0, 2, size=batch).astype(np.float64)

    def loss_value() -> float:
        return float(ad.bce_with_logits(model.forward(Tensor(x)), Tensor(y)).data)

    model.zero_grad()
    loss = ad.bce_with_logits(model.forward(Tensor(x)), Tensor(y))
    loss.backward()

    worst = 0.0
    for name, p in model.parameters().items():
        def f(v, p=p):
            saved = p.data
            p.data = v.reshape(saved.shape)
            out = loss_value()
            p.data = saved
            return out

        fd = fd_gradient(f, p.data.ravel()).reshape(p.data.shape)
        dev = np.abs(p.grad - fd) / np.maximum(np.abs(fd), rtol_floor)
        worst = max(worst, float(dev.max()))
    return worst
