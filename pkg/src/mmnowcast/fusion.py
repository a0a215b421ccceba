"""Combining the image and meteorological modalities.

Intermediate fusion happens inside :class:`MultiModalNet`; late fusion of two
uni-modal predictions is :func:`ensemble_average` / :func:`fit_ensemble`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as T
from .tensor import Tensor

__all__ = [
    "FusionConfig",
    "EnsembleWeights",
    "fuse_concat",
    "fuse_bilinear",
    "fused_length",
    "ensemble_average",
    "fit_ensemble",
    "MultiModalNet",
    "build_meteo_extractor",
]


@dataclass(frozen=True)
class FusionConfig:
    method: str = "concat"  # concat | bilinear
    meteo_extractor: str = "none"  # none | fnn
    image_features: int = 64
    meteo_features: int = 24
    # placeholder for feature selection on the bilinear block; no procedure implemented
    feature_selection: str | None = None

    def __post_init__(self):
        if self.method not in ("concat", "bilinear"):
            raise ValueError(f"unknown fusion method {self.method!r}")
        if self.meteo_extractor not in ("none", "fnn"):
            raise ValueError(f"unknown meteo extractor {self.meteo_extractor!r}")
        if self.feature_selection is not None:
            raise NotImplementedError("feature selection for bilinear pooling is not implemented")


@dataclass(frozen=True)
class EnsembleWeights:
    c1: float
    c2: float
    regularized: bool = False

    def __call__(self, y1, y2):
        return self.c1 * np.asarray(y1) + self.c2 * np.asarray(y2)


def fuse_concat(h1, meteo) -> Tensor:
    return T.concat(h1, meteo)


def fuse_bilinear(h1, h2) -> Tensor:
    """Flattened outer product of ``[h1; 1]`` and ``[h2; 1]`` (length ``(p+1)(q+1)``)."""
    return T.outer(T.augment_ones(h1), T.augment_ones(h2))


def fused_length(method: str, p: int, q: int) -> int:
    return p + q if method == "concat" else (p + 1) * (q + 1)


def ensemble_average(y1, y2):
    return 0.5 * np.asarray(y1, dtype=float) + 0.5 * np.asarray(y2, dtype=float)


def fit_ensemble(preds1, preds2, truth, ridge: float = 1e-8) -> EnsembleWeights:
    """Least-squares ``truth ~ c1*preds1 + c2*preds2`` without intercept.

    Falls back to a ridge-regularised solve when the two prediction columns
    are (numerically) collinear.
    """
    p1 = np.asarray(preds1, dtype=float).ravel()
    p2 = np.asarray(preds2, dtype=float).ravel()
    y = np.asarray(truth, dtype=float).ravel()
    if not (p1.size == p2.size == y.size):
        raise ValueError("prediction and truth vectors must have equal length")
    if y.size < 2:
        raise ValueError("need at least two samples to fit the ensemble")
    X = np.column_stack([p1, p2])
    gram = X.T @ X
    rhs = X.T @ y
    scale = max(np.abs(gram).max(), 1e-300)
    if np.linalg.cond(gram) > 1e12 or np.abs(gram).max() == 0:
        warnings.warn("ensemble design matrix is rank-deficient; using ridge fallback", RuntimeWarning, stacklevel=2)
        c = np.linalg.solve(gram + ridge * scale * np.eye(2), rhs)
        return EnsembleWeights(float(c[0]), float(c[1]), regularized=True)
    c = np.linalg.solve(gram, rhs)
    return EnsembleWeights(float(c[0]), float(c[1]))


def build_meteo_extractor(n_inputs: int = 24, seed: int = 0) -> nn.Network:
    # keeps the fused width equal to the plain concatenation so FNN-pred is unchanged
    specs = [
        nn.LayerSpec("fc", "M1", units=64, activation="relu"),
        nn.LayerSpec("fc", "M2", units=n_inputs, activation="sigmoid"),
    ]
    return nn.Network(specs, (n_inputs,), seed, name="FNN-meteo")


class MultiModalNet:
    """CNN-fe image features fused with meteo features, followed by FNN-pred.

    With ``wind_head`` an extra FNN-pred reads only the meteo features and
    predicts the wind output, so the net returns ``N x 2`` (PV, wind).
    """

    def __init__(self, config: FusionConfig = FusionConfig(), seed: int = 0, wind_head: bool = False):
        self.config = config
        ss = np.random.SeedSequence(seed)
        s_cnn, s_met, s_pred, s_wind = (int(s.generate_state(1)[0]) for s in ss.spawn(4))
        self.cnn = nn.build_cnn_fe(seed=s_cnn)
        self.meteo = build_meteo_extractor(config.meteo_features, seed=s_met) if config.meteo_extractor == "fnn" else None
        n_fused = fused_length(config.method, config.image_features, config.meteo_features)
        self.pred = nn.build_fnn_pred(n_fused, 1, seed=s_pred)
        self.wind = nn.build_fnn_pred(config.meteo_features, 1, seed=s_wind) if wind_head else None

    @property
    def networks(self) -> dict[str, nn.Network]:
        nets = {"cnn_fe": self.cnn, "fnn_pred": self.pred}
        if self.meteo is not None:
            nets["meteo_fe"] = self.meteo
        if self.wind is not None:
            nets["fnn_wind"] = self.wind
        return nets

    def parameters(self) -> list[Tensor]:
        return [p for n in self.networks.values() for p in n.parameters()]

    def state_dict(self) -> dict[str, dict[str, np.ndarray]]:
        return {k: n.state_dict() for k, n in self.networks.items()}

    def load_state_dict(self, state) -> None:
        for k, n in self.networks.items():
            n.load_state_dict(state[k])

    def fused(self, image, meteo) -> Tensor:
        h1 = self.cnn(image)
        h2 = self.meteo(meteo) if self.meteo is not None else meteo
        if self.config.method == "concat":
            return fuse_concat(h1, h2)
        return fuse_bilinear(h1, h2)

    def __call__(self, image, meteo) -> Tensor:
        image = image if isinstance(image, Tensor) else Tensor(image)
        meteo = meteo if isinstance(meteo, Tensor) else Tensor(meteo)
        pv = self.pred(self.fused(image, meteo))
        if self.wind is None:
            return pv
        return T.concat(pv, self.wind(meteo))
