"""Dense channel-major feature maps and the primitive layers built on them.

Everything is float64: the gradient verification in :mod:`lesiondet.attention`
relies on finite-difference steps around 1e-6, which single precision cannot
resolve. Maps carry no batch dimension; batching is a loop at the caller.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import DimensionMismatchError, DomainError

__all__ = [
    "FeatureMap",
    "Conv1x1Params",
    "BNParams",
    "conv1x1",
    "bn_inference",
    "relu",
    "sigmoid",
    "sigmoid_array",
]


def _as_finite_f64(values: Any, what: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{what} must contain only finite values")
    return arr


@dataclass(frozen=True)
class FeatureMap:
    """A (channels, height, width) block of finite float64 values.

    Layout is channel-major, then row-major within a channel. The backing
    array is copied on construction and marked read-only.
    """

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = _as_finite_f64(self.data, "FeatureMap data")
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise DimensionMismatchError(
                f"FeatureMap needs a (channels, height, width) array, got shape {arr.shape}"
            )
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def to_json_dict(self) -> dict:
        return {
            "channels": self.channels,
            "height": self.height,
            "width": self.width,
            "data": self.data.ravel().tolist(),
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "FeatureMap":
        try:
            c, h, w = int(obj["channels"]), int(obj["height"]), int(obj["width"])
            flat = np.array(obj["data"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise DomainError(f"malformed feature-map record: {exc}") from exc
        if flat.size != c * h * w:
            raise DimensionMismatchError(
                f"feature-map data length {flat.size} != channels*height*width = {c * h * w}"
            )
        return cls(flat.reshape(c, h, w))

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh)

    @classmethod
    def load(cls, path) -> "FeatureMap":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))


@dataclass(frozen=True)
class Conv1x1Params:
    """Weights of a pointwise convolution: weight is (out, in), bias is (out,)."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        weight = _as_finite_f64(self.weight, "conv weight")
        bias = _as_finite_f64(self.bias, "conv bias")
        if weight.ndim != 2:
            raise DimensionMismatchError(f"conv weight must be 2-d, got shape {weight.shape}")
        if bias.shape != (weight.shape[0],):
            raise DimensionMismatchError(
                f"conv bias shape {bias.shape} does not match out_channels {weight.shape[0]}"
            )
        weight.setflags(write=False)
        bias.setflags(write=False)
        object.__setattr__(self, "weight", weight)
        object.__setattr__(self, "bias", bias)

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    def to_json_dict(self) -> dict:
        return {"weight": self.weight.tolist(), "bias": self.bias.tolist()}

    @classmethod
    def from_json_dict(cls, obj: dict) -> "Conv1x1Params":
        return cls(np.array(obj["weight"]), np.array(obj["bias"]))


@dataclass(frozen=True)
class BNParams:
    """Per-channel affine normalization with fixed running statistics."""

    scale: np.ndarray
    shift: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5

    def __post_init__(self) -> None:
        fields = {
            "scale": _as_finite_f64(self.scale, "bn scale"),
            "shift": _as_finite_f64(self.shift, "bn shift"),
            "running_mean": _as_finite_f64(self.running_mean, "bn running_mean"),
            "running_var": _as_finite_f64(self.running_var, "bn running_var"),
        }
        n = fields["scale"].shape
        if len(n) != 1:
            raise DimensionMismatchError("bn parameters must be 1-d vectors")
        for name, arr in fields.items():
            if arr.shape != n:
                raise DimensionMismatchError(
                    f"bn {name} shape {arr.shape} does not match scale shape {n}"
                )
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(fields["running_var"] < 0):
            raise DomainError("bn running_var must be >= 0 elementwise")
        if not (np.isfinite(self.eps) and self.eps > 0):
            raise DomainError(f"bn eps must be > 0, got {self.eps}")

    @property
    def channels(self) -> int:
        return self.scale.shape[0]

    def to_json_dict(self) -> dict:
        return {
            "scale": self.scale.tolist(),
            "shift": self.shift.tolist(),
            "running_mean": self.running_mean.tolist(),
            "running_var": self.running_var.tolist(),
            "eps": self.eps,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "BNParams":
        return cls(
            np.array(obj["scale"]),
            np.array(obj["shift"]),
            np.array(obj["running_mean"]),
            np.array(obj["running_var"]),
            float(obj.get("eps", 1e-5)),
        )


def conv1x1(x: FeatureMap, p: Conv1x1Params) -> FeatureMap:
    """Pointwise convolution: out[o, h, w] = bias[o] + sum_c weight[o, c] * x[c, h, w]."""
    if x.channels != p.in_channels:
        raise DimensionMismatchError(
            f"conv1x1 expects {p.in_channels} input channels, feature map has {x.channels}"
        )
    out = np.tensordot(p.weight, x.data, axes=([1], [0]))
    out += p.bias[:, None, None]
    return FeatureMap(out)


def bn_inference(x: FeatureMap, p: BNParams) -> FeatureMap:
    """Normalize each channel with fixed statistics, then apply the affine pair."""
    if p.channels != x.channels:
        raise DimensionMismatchError(
            f"bn parameters cover {p.channels} channels, feature map has {x.channels}"
        )
    centered = x.data - p.running_mean[:, None, None]
    normed = centered / np.sqrt(p.running_var + p.eps)[:, None, None]
    return FeatureMap(normed * p.scale[:, None, None] + p.shift[:, None, None])


def relu(x: FeatureMap) -> FeatureMap:
    return FeatureMap(np.maximum(x.data, 0.0))


def sigmoid_array(values: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function, elementwise on a float64 array."""
    values = np.asarray(values, dtype=np.float64)
    out = np.empty_like(values)
    pos = values >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-values[pos]))
    ez = np.exp(values[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: FeatureMap) -> FeatureMap:
    return FeatureMap(sigmoid_array(x.data))
