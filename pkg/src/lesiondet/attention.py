"""Background-suppressing feature gating for pyramid levels.

A pyramid level ``P`` is re-weighted by two learned gates computed in a
single forward pass:

* a per-channel, per-pixel importance gate ``g`` obtained by squashing a
  pointwise convolution of ``P`` through a logistic;
* a single-channel similarity gate ``s`` tying each pixel's embedded
  feature to a global scene embedding pooled from the deepest backbone
  map ``scene``.

The gated output is ``(1 + g) * P * s`` with ``s`` broadcast across
channels, so background pixels whose embeddings disagree with the scene
context are attenuated while foreground responses are amplified by up to
a factor of two. The module also provides the analytic input-gradients of
the composite and a finite-difference verifier for them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionMismatchError, DomainError
from .tensor import BNParams, Conv1x1Params, FeatureMap, sigmoid_array

__all__ = [
    "AttentionParams",
    "AttentionOutput",
    "GradCheckReport",
    "forward",
    "input_gradients",
    "gradient_check",
    "random_instance",
]


@dataclass(frozen=True)
class AttentionParams:
    """Learned operators of the gating composite.

    channel_conv : square pointwise conv producing the importance logits
        (in and out channels both equal the level's channel count).
    embed_conv / embed_norm : pointwise conv plus normalization projecting
        the level into the shared embedding width.
    scene_conv : pointwise conv projecting the scene map into the same
        embedding width before global average pooling.
    """

    channel_conv: Conv1x1Params
    embed_conv: Conv1x1Params
    embed_norm: BNParams
    scene_conv: Conv1x1Params

    def __post_init__(self) -> None:
        if self.channel_conv.out_channels != self.channel_conv.in_channels:
            raise DimensionMismatchError(
                "channel_conv must be square so the importance gate covers every channel"
            )
        width = self.embed_conv.out_channels
        if self.scene_conv.out_channels != width or self.embed_norm.channels != width:
            raise DimensionMismatchError(
                "embed_conv, scene_conv and embed_norm must share one embedding width, "
                f"got {width}, {self.scene_conv.out_channels}, {self.embed_norm.channels}"
            )

    @property
    def level_channels(self) -> int:
        return self.channel_conv.in_channels

    @property
    def scene_channels(self) -> int:
        return self.scene_conv.in_channels

    @property
    def embed_width(self) -> int:
        return self.embed_conv.out_channels

    def to_json_dict(self) -> dict:
        return {
            "channel_conv": self.channel_conv.to_json_dict(),
            "embed_conv": self.embed_conv.to_json_dict(),
            "embed_norm": self.embed_norm.to_json_dict(),
            "scene_conv": self.scene_conv.to_json_dict(),
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "AttentionParams":
        return cls(
            channel_conv=Conv1x1Params.from_json_dict(obj["channel_conv"]),
            embed_conv=Conv1x1Params.from_json_dict(obj["embed_conv"]),
            embed_norm=BNParams.from_json_dict(obj["embed_norm"]),
            scene_conv=Conv1x1Params.from_json_dict(obj["scene_conv"]),
        )


@dataclass(frozen=True)
class AttentionOutput:
    """Gated map plus every intermediate needed to inspect the pass.

    gated : the re-weighted level, same shape as the input level.
    channel_gate : per-channel, per-pixel gate in (0, 1).
    similarity : single-channel (1, H, W) gate in (0, 1).
    scene_embedding : pooled embedding vector, length = embedding width.
    projected : embedded level after normalization and rectification.
    """

    gated: FeatureMap
    channel_gate: FeatureMap
    similarity: FeatureMap
    scene_embedding: np.ndarray
    projected: FeatureMap


def _check_dims(level: FeatureMap, scene: FeatureMap, params: AttentionParams) -> None:
    if level.channels != params.level_channels:
        raise DimensionMismatchError(
            f"level has {level.channels} channels, params expect {params.level_channels}"
        )
    if scene.channels != params.scene_channels:
        raise DimensionMismatchError(
            f"scene has {scene.channels} channels, params expect {params.scene_channels}"
        )


def _conv_raw(data: np.ndarray, p: Conv1x1Params) -> np.ndarray:
    out = np.tensordot(p.weight, data, axes=([1], [0]))
    out += p.bias[:, None, None]
    return out


def _forward_raw(level: np.ndarray, scene: np.ndarray, params: AttentionParams) -> dict:
    """Run the composite on raw arrays, keeping pre-activations for gradients."""
    gate_logits = _conv_raw(level, params.channel_conv)
    channel_gate = sigmoid_array(gate_logits)

    norm = params.embed_norm
    embedded = _conv_raw(level, params.embed_conv)
    embedded -= norm.running_mean[:, None, None]
    embedded /= np.sqrt(norm.running_var + norm.eps)[:, None, None]
    embedded *= norm.scale[:, None, None]
    embedded += norm.shift[:, None, None]
    projected = np.maximum(embedded, 0.0)

    scene_map = _conv_raw(scene, params.scene_conv)
    scene_embedding = scene_map.mean(axis=(1, 2))

    sim_logits = np.tensordot(scene_embedding, projected, axes=([0], [0]))
    similarity = sigmoid_array(sim_logits)

    gated = (1.0 + channel_gate) * level * similarity[None, :, :]
    return {
        "channel_gate": channel_gate,
        "pre_relu": embedded,
        "projected": projected,
        "scene_embedding": scene_embedding,
        "similarity": similarity,
        "gated": gated,
    }


def forward(level: FeatureMap, scene: FeatureMap, params: AttentionParams) -> AttentionOutput:
    """Apply the gating composite to one pyramid level.

    ``level`` and ``scene`` may have different spatial sizes; the scene map
    is reduced to a single embedding vector by global average pooling, so
    only channel counts must match the parameters.
    """
    _check_dims(level, scene, params)
    cache = _forward_raw(level.data, scene.data, params)
    return AttentionOutput(
        gated=FeatureMap(cache["gated"]),
        channel_gate=FeatureMap(cache["channel_gate"]),
        similarity=FeatureMap(cache["similarity"][None, :, :]),
        scene_embedding=cache["scene_embedding"],
        projected=FeatureMap(cache["projected"]),
    )


def input_gradients(
    level: FeatureMap,
    scene: FeatureMap,
    params: AttentionParams,
    upstream: FeatureMap,
) -> tuple[FeatureMap, FeatureMap]:
    """Vector-Jacobian product of :func:`forward` with respect to both inputs.

    ``upstream`` holds d(loss)/d(gated). The level gradient accumulates the
    three paths through which the level influences the output (direct
    factor, importance gate, embedding that feeds the similarity gate); the
    scene gradient flows through the pooled embedding alone. Rectifier
    kinks use the zero subgradient.
    """
    _check_dims(level, scene, params)
    if upstream.data.shape != level.data.shape:
        raise DimensionMismatchError(
            f"upstream shape {upstream.data.shape} must equal level shape {level.data.shape}"
        )
    p, c5, g = level.data, scene.data, upstream.data
    cache = _forward_raw(p, c5, params)
    gate = cache["channel_gate"]
    sim = cache["similarity"]
    projected = cache["projected"]
    pre_relu = cache["pre_relu"]
    embedding = cache["scene_embedding"]

    d_gate = g * p * sim[None, :, :]
    d_sim = ((1.0 + gate) * p * g).sum(axis=0)
    d_level = g * (1.0 + gate) * sim[None, :, :]

    # importance-gate path
    d_gate_logits = d_gate * gate * (1.0 - gate)
    d_level += np.tensordot(params.channel_conv.weight, d_gate_logits, axes=([0], [0]))

    # similarity path back through the embedded level
    d_sim_logits = d_sim * sim * (1.0 - sim)
    d_projected = d_sim_logits[None, :, :] * embedding[:, None, None]
    d_pre_relu = np.where(pre_relu > 0.0, d_projected, 0.0)
    norm = params.embed_norm
    d_embedded = d_pre_relu * (norm.scale / np.sqrt(norm.running_var + norm.eps))[:, None, None]
    d_level += np.tensordot(params.embed_conv.weight, d_embedded, axes=([0], [0]))

    # scene path through the pooled embedding
    d_embedding = (d_sim_logits[None, :, :] * projected).sum(axis=(1, 2))
    pixels = c5.shape[1] * c5.shape[2]
    d_scene_map = np.broadcast_to(
        (d_embedding / pixels)[:, None, None], (embedding.size, c5.shape[1], c5.shape[2])
    )
    d_scene = np.tensordot(params.scene_conv.weight, d_scene_map, axes=([0], [0]))

    return FeatureMap(d_level), FeatureMap(d_scene)


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    passed: bool
    tolerance: float
    step: float

    def to_json_dict(self) -> dict:
        return {
            "max_rel_error": self.max_rel_error,
            "pass": self.passed,
            "tolerance": self.tolerance,
            "step": self.step,
        }


def _default_probe(shape: tuple[int, ...]) -> np.ndarray:
    # deterministic, nowhere-zero, non-constant covector
    n = int(np.prod(shape))
    return np.linspace(0.25, 1.0, n).reshape(shape)


def gradient_check(
    level: FeatureMap,
    scene: FeatureMap,
    params: AttentionParams,
    tolerance: float,
    step: float = 1e-6,
    upstream: Optional[FeatureMap] = None,
) -> GradCheckReport:
    """Compare analytic input-gradients against central finite differences.

    Every coordinate of both inputs is probed with a central difference of
    the scalar loss ``sum(upstream * gated)``. The relative error uses an
    absolute floor of 1e-8 in the denominator; the check passes when the
    maximum over all coordinates stays below ``tolerance``.
    """
    if not (np.isfinite(tolerance) and tolerance >= 0):
        raise DomainError(f"tolerance must be a finite value >= 0, got {tolerance}")
    if not (np.isfinite(step) and step > 0):
        raise DomainError(f"step must be > 0, got {step}")
    if upstream is None:
        upstream = FeatureMap(_default_probe(level.data.shape))
    grad_level, grad_scene = input_gradients(level, scene, params, upstream)
    g = upstream.data

    def loss(level_arr: np.ndarray, scene_arr: np.ndarray) -> float:
        return float(np.sum(g * _forward_raw(level_arr, scene_arr, params)["gated"]))

    max_rel = 0.0
    for vary_level, base, analytic in (
        (True, level.data, grad_level.data),
        (False, scene.data, grad_scene.data),
    ):
        flat = base.ravel()
        for i in range(flat.size):
            hi = base.copy().ravel()
            hi[i] = flat[i] + step
            lo = base.copy().ravel()
            lo[i] = flat[i] - step
            hi, lo = hi.reshape(base.shape), lo.reshape(base.shape)
            if vary_level:
                fd = (loss(hi, scene.data) - loss(lo, scene.data)) / (2.0 * step)
            else:
                fd = (loss(level.data, hi) - loss(level.data, lo)) / (2.0 * step)
            a = analytic.ravel()[i]
            rel = abs(a - fd) / max(abs(a), abs(fd), 1e-8)
            if rel > max_rel:
                max_rel = rel
    max_rel = float(max_rel)
    return GradCheckReport(
        max_rel_error=max_rel, passed=max_rel < tolerance, tolerance=tolerance, step=step
    )


def random_instance(
    seed: int,
    level_channels: int = 3,
    scene_channels: int = 3,
    embed_width: int = 2,
    height: int = 2,
    width: int = 2,
    scene_height: Optional[int] = None,
    scene_width: Optional[int] = None,
) -> tuple[FeatureMap, FeatureMap, AttentionParams]:
    """Deterministic fixture: weights uniform in [-0.5, 0.5], inputs in [-1, 1].

    Normalization variances are drawn from [0.05, 0.5] so the scale factors
    stay well conditioned. The generator is PCG64, pinned so fixtures are
    reproducible across platforms.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    sh = scene_height if scene_height is not None else height
    sw = scene_width if scene_width is not None else width

    def u(*shape):
        return rng.uniform(-0.5, 0.5, shape)

    params = AttentionParams(
        channel_conv=Conv1x1Params(u(level_channels, level_channels), u(level_channels)),
        embed_conv=Conv1x1Params(u(embed_width, level_channels), u(embed_width)),
        embed_norm=BNParams(
            scale=u(embed_width),
            shift=u(embed_width),
            running_mean=u(embed_width),
            running_var=rng.uniform(0.05, 0.5, embed_width),
            eps=1e-5,
        ),
        scene_conv=Conv1x1Params(u(embed_width, scene_channels), u(embed_width)),
    )
    level = FeatureMap(rng.uniform(-1.0, 1.0, (level_channels, height, width)))
    scene = FeatureMap(rng.uniform(-1.0, 1.0, (scene_channels, sh, sw)))
    return level, scene, params
