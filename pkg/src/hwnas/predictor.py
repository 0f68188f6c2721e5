"""Accuracy predictor: stacked layer features and an RBF epsilon-SVR.

:class:`ArchitectureEncoder` turns architectures into fixed-length vectors
``[resolution, (k, stride, in_ch, out_ch, skipped) * max_layers]``;
:class:`SVRAccuracyPredictor` is an epsilon-insensitive support vector
regressor trained with a second-order SMO solver. Both follow the
scikit-learn estimator protocol, so ``make_pipeline(ArchitectureEncoder(),
SVRAccuracyPredictor())`` fits directly on lists of architectures.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.model_selection import KFold
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .arch import Architecture, LayerSpec, SubgraphTemplate, depthwise, full
from .exceptions import DegenerateDataWarning, DimensionMismatch, TooManyLayers

FEATURES_PER_LAYER = 5


def encode(arch: Architecture, max_layers: int) -> np.ndarray:
    """Feature vector of length ``1 + 5 * max_layers``, zero-padded at the tail."""
    if arch.N > max_layers:
        raise TooManyLayers(f"architecture has {arch.N} layers, encoder allows {max_layers}")
    v = np.zeros(1 + FEATURES_PER_LAYER * max_layers)
    v[0] = arch.resolution
    for i, layer in enumerate(arch.layers):
        o = 1 + FEATURES_PER_LAYER * i
        v[o : o + FEATURES_PER_LAYER] = (layer.kernel.k, layer.stride, layer.in_ch, layer.out_ch, float(layer.skipped))
    return v


def max_layers_for(n_features: int) -> int:
    if n_features < 1 or (n_features - 1) % FEATURES_PER_LAYER:
        raise DimensionMismatch(f"{n_features} features is not 1 + {FEATURES_PER_LAYER} * max_layers")
    return (n_features - 1) // FEATURES_PER_LAYER


class ArchitectureEncoder(TransformerMixin, BaseEstimator):
    """Stateless transformer from architectures to stacked feature vectors."""

    def __init__(self, max_layers: int = 32):
        self.max_layers = max_layers

    def fit(self, X=None, y=None):
        self.n_features_out_ = 1 + FEATURES_PER_LAYER * self.max_layers
        return self

    def transform(self, X: Iterable[Architecture]) -> np.ndarray:
        rows = [encode(a, self.max_layers) for a in X]
        return np.vstack(rows) if rows else np.zeros((0, 1 + FEATURES_PER_LAYER * self.max_layers))

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.requires_fit = False
        tags.input_tags.two_d_array = False
        return tags


def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    sq = np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :] - 2.0 * A @ B.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


_TAU = 1e-12


def _smo_epsilon_svr(K: np.ndarray, z: np.ndarray, C: float, eps: float, tol: float, max_iter: int):
    """Solve the epsilon-SVR dual in its 2l-variable form.

    Variables ``a[:l]`` / ``a[l:]`` carry labels +1 / -1 and linear terms
    ``eps - z`` / ``eps + z``. Working pairs are picked by maximal violation
    for ``i`` and second-order gain for ``j``. Returns ``(coef, bias, n_iter)``
    with ``coef = a[:l] - a[l:]``.
    """
    l = len(z)
    y = np.concatenate([np.ones(l), -np.ones(l)])
    p = np.concatenate([eps - z, eps + z])
    a = np.zeros(2 * l)
    G = p.copy()
    diag = np.diag(K)
    QD = np.concatenate([diag, diag])
    Kfull = np.block([[K, K], [K, K]])

    def qrow(t):
        return y[t] * y * Kfull[t]

    it = 0
    while it < max_iter:
        # i: most violating index among "up" candidates
        up = np.where(y > 0, a < C, a > 0)
        score_i = np.where(up, -y * G, -np.inf)
        i = int(np.argmax(score_i))
        Gmax = score_i[i]
        Qi = qrow(i) if Gmax > -np.inf else None

        low = np.where(y > 0, a > 0, a < C)
        yG = -y * G  # for "low" candidates the violation is -yG
        Gmax2 = np.max(np.where(low, -yG, -np.inf)) if low.any() else -np.inf
        if Gmax + Gmax2 < tol or Qi is None:
            break
        grad_diff = Gmax - yG
        quad = QD[i] + QD - 2.0 * y[i] * y * Qi
        quad = np.where(quad > 0, quad, _TAU)
        cand = low & (grad_diff > 0)
        if not cand.any():
            break
        obj = np.where(cand, -(grad_diff * grad_diff) / quad, np.inf)
        j = int(np.argmin(obj))
        Qj = qrow(j)

        ai_old, aj_old = a[i], a[j]
        if y[i] != y[j]:
            q = QD[i] + QD[j] + 2.0 * Qi[j]
            q = q if q > 0 else _TAU
            delta = (-G[i] - G[j]) / q
            diff = a[i] - a[j]
            a[i] += delta
            a[j] += delta
            if diff > 0:
                if a[j] < 0:
                    a[j], a[i] = 0.0, diff
            elif a[i] < 0:
                a[i], a[j] = 0.0, -diff
            if diff > 0:
                if a[i] > C:
                    a[i], a[j] = C, C - diff
            elif a[j] > C:
                a[j], a[i] = C, C + diff
        else:
            q = QD[i] + QD[j] - 2.0 * Qi[j]
            q = q if q > 0 else _TAU
            delta = (G[i] - G[j]) / q
            s = a[i] + a[j]
            a[i] -= delta
            a[j] += delta
            if s > C:
                if a[i] > C:
                    a[i], a[j] = C, s - C
            elif a[j] < 0:
                a[j], a[i] = 0.0, s
            if s > C:
                if a[j] > C:
                    a[j], a[i] = C, s - C
            elif a[i] < 0:
                a[i], a[j] = 0.0, s
        G += Qi * (a[i] - ai_old) + Qj * (a[j] - aj_old)
        it += 1
    else:
        warnings.warn(f"SMO stopped after {max_iter} iterations before reaching tolerance", RuntimeWarning)

    # bias from free variables, or the midpoint of the feasible interval
    yG = y * G
    at_ub, at_lb = a >= C, a <= 0
    free = ~at_ub & ~at_lb
    if free.any():
        rho = float(np.mean(yG[free]))
    else:
        ub_mask = (at_ub & (y < 0)) | (at_lb & (y > 0))
        lb_mask = (at_ub & (y > 0)) | (at_lb & (y < 0))
        ub = np.min(yG[ub_mask]) if ub_mask.any() else math.inf
        lb = np.max(yG[lb_mask]) if lb_mask.any() else -math.inf
        rho = float((ub + lb) / 2)
    coef = a[:l] - a[l:]
    return coef, -rho, it


class SVRAccuracyPredictor(RegressorMixin, BaseEstimator):
    """Epsilon-SVR with an RBF kernel and built-in z-score normalization.

    Features with zero training variance are dropped (with a
    :class:`DegenerateDataWarning`). ``gamma=None`` means one over the number
    of retained features.
    """

    def __init__(self, C: float = 1.0, epsilon: float = 0.1, gamma: float | None = None,
                 tol: float = 1e-3, normalize: bool = True, max_iter: int | None = None):
        self.C = C
        self.epsilon = epsilon
        self.gamma = gamma
        self.tol = tol
        self.normalize = normalize
        self.max_iter = max_iter

    def _prepare(self, X):
        Xk = X[:, self.keep_]
        if self.normalize:
            Xk = (Xk - self.mean_) / self.scale_
        return Xk

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        if X.shape[0] < 2:
            raise ValueError("need at least two training samples")
        if not self.C > 0 or self.epsilon < 0:
            raise ValueError("C must be positive and epsilon non-negative")
        self.n_features_in_ = X.shape[1]
        std = X.std(axis=0)
        self.keep_ = std > 0
        if not self.keep_.all():
            dropped = np.flatnonzero(~self.keep_).tolist()
            warnings.warn(f"dropping zero-variance features {dropped}", DegenerateDataWarning, stacklevel=2)
        self.mean_ = X[:, self.keep_].mean(axis=0)
        self.scale_ = std[self.keep_]
        Xk = self._prepare(X)
        n_kept = Xk.shape[1]
        self.gamma_ = float(self.gamma) if self.gamma is not None else 1.0 / max(n_kept, 1)
        K = rbf_kernel(Xk, Xk, self.gamma_)
        max_iter = self.max_iter if self.max_iter is not None else max(100_000, 100 * len(y))
        coef, bias, self.n_iter_ = _smo_epsilon_svr(K, y, float(self.C), float(self.epsilon), self.tol, max_iter)
        sv = np.abs(coef) > 0
        self.support_ = np.flatnonzero(sv)
        self.support_vectors_ = Xk[sv]
        self.dual_coef_ = coef[sv]
        self.intercept_ = float(bias)
        if np.any(np.abs(self.dual_coef_) > self.C * (1 + 1e-12)):
            raise AssertionError("dual coefficients left the [-C, C] box")
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "dual_coef_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise DimensionMismatch(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        Xk = self._prepare(X)
        if not len(self.dual_coef_):
            return np.full(X.shape[0], self.intercept_)
        return rbf_kernel(Xk, self.support_vectors_, self.gamma_) @ self.dual_coef_ + self.intercept_

    predict = decision_function

    # --- persistence -----------------------------------------------------
    def to_dict(self) -> dict:
        check_is_fitted(self, "dual_coef_")
        return {
            "model": "epsilon_svr_rbf",
            "hyperparams": self.get_params(),
            "n_features_in": int(self.n_features_in_),
            "keep": self.keep_.astype(int).tolist(),
            "mean": self.mean_.tolist(),
            "scale": self.scale_.tolist(),
            "gamma": self.gamma_,
            "support_vectors": self.support_vectors_.tolist(),
            "dual_coef": self.dual_coef_.tolist(),
            "intercept": self.intercept_,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SVRAccuracyPredictor":
        est = cls(**doc["hyperparams"])
        est.n_features_in_ = int(doc["n_features_in"])
        est.keep_ = np.asarray(doc["keep"], dtype=bool)
        est.mean_ = np.asarray(doc["mean"], dtype=np.float64)
        est.scale_ = np.asarray(doc["scale"], dtype=np.float64)
        est.gamma_ = float(doc["gamma"])
        sv = np.asarray(doc["support_vectors"], dtype=np.float64)
        est.support_vectors_ = sv.reshape(-1, int(est.keep_.sum()))
        est.dual_coef_ = np.asarray(doc["dual_coef"], dtype=np.float64)
        est.intercept_ = float(doc["intercept"])
        return est

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "SVRAccuracyPredictor":
        return cls.from_dict(json.loads(Path(path).read_text()))

    @property
    def max_layers(self) -> int:
        return max_layers_for(self.n_features_in_)

    def predict_architectures(self, archs: Sequence[Architecture]) -> np.ndarray:
        return self.predict(ArchitectureEncoder(self.max_layers).transform(archs))


@dataclass(frozen=True)
class CVResult:
    best_params: dict
    fold_rmse: dict  # grid index -> list of per-fold RMSE
    grid: tuple

    def mean_rmse(self, idx: int) -> float:
        return float(np.mean(self.fold_rmse[idx]))


def _grid_point(g) -> dict:
    if isinstance(g, dict):
        return {"C": float(g["C"]), "epsilon": float(g["epsilon"]), "gamma": g.get("gamma")}
    C, e, gamma = g
    return {"C": float(C), "epsilon": float(e), "gamma": gamma}


def cross_validate(X, y, grid, k_folds: int = 5, seed: int = 0, **fixed) -> CVResult:
    """K-fold grid search over ``(C, epsilon, gamma)``.

    Folds come from a seeded shuffle; the best point minimizes mean RMSE,
    with ties going to the smaller ``C`` and then to grid order.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not 2 <= k_folds <= len(y):
        raise ValueError(f"k_folds must lie in [2, {len(y)}]")
    points = tuple(_grid_point(g) for g in grid)
    if not points:
        raise ValueError("empty hyperparameter grid")
    folds = list(KFold(n_splits=k_folds, shuffle=True, random_state=seed).split(X))
    scores = {}
    for idx, params in enumerate(points):
        rmses = []
        for tr, te in folds:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DegenerateDataWarning)
                model = SVRAccuracyPredictor(**params, **fixed).fit(X[tr], y[tr])
            err = model.predict(X[te]) - y[te]
            rmses.append(float(np.sqrt(np.mean(err * err))))
        scores[idx] = rmses
    best = min(range(len(points)), key=lambda i: (np.mean(scores[i]), points[i]["C"], i))
    return CVResult(points[best], scores, points)


# --- datasets --------------------------------------------------------------

def save_dataset(path, X, y) -> None:
    X = np.asarray(X, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{i}" for i in range(X.shape[1])] + ["accuracy"])
        for row, target in zip(X, y):
            w.writerow([repr(float(v)) for v in row] + [repr(float(target))])


def load_dataset(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[-1] != "accuracy" or any(h != f"f{i}" for i, h in enumerate(header[:-1])):
            raise ValueError(f"{path}: expected columns f0..fD,accuracy")
        rows = [[float(v) for v in r] for r in reader if r]
    data = np.asarray(rows, dtype=np.float64).reshape(-1, len(header))
    return data[:, :-1], data[:, -1]


SYNTH_TEMPLATE = SubgraphTemplate((full(1), depthwise(3), full(1)))


def synthetic_architecture(rng: np.random.Generator, max_instances: int = 5,
                           channel_set=(16, 24, 32, 48, 64, 96, 128), resolution_set=(128, 160, 192, 224)) -> Architecture:
    """Random chain of inverted-bottleneck instances on :data:`SYNTH_TEMPLATE`."""
    n_inst = int(rng.integers(2, max_instances + 1))
    ch = int(rng.choice(channel_set[:3]))
    specs = [LayerSpec(full(3), 3, ch, 2, False)]
    for _ in range(n_inst):
        hidden = int(rng.choice(channel_set))
        out = int(rng.choice(channel_set))
        stride = int(rng.choice((1, 2)))
        skip_dw = bool(rng.random() < 0.2)
        specs.append(LayerSpec(full(1), ch, hidden, 1, False))
        specs.append(LayerSpec(depthwise(3), hidden, hidden, 1 if skip_dw else stride, skip_dw))
        specs.append(LayerSpec(full(1), hidden, out, 1, False))
        ch = out
    template = SubgraphTemplate((full(3),) + SYNTH_TEMPLATE.kernels)
    return Architecture.build(int(rng.choice(resolution_set)), template, specs)


def synthetic_accuracy(arch: Architecture) -> float:
    """Smooth saturating function of compute, parameters and depth, in [0, 1]."""
    macs = sum(l.n_weights * l.out_h * l.out_w for l in arch.layers if not l.skipped)
    params = sum(l.n_weights for l in arch.layers)
    depth = sum(not l.skipped for l in arch.layers)
    x = 0.6 * (math.log10(max(macs, 1)) - 7.0) + 0.3 * (math.log10(max(params, 1)) - 4.5) + 0.05 * (depth - 8)
    return 0.5 + 0.25 * math.tanh(x)


def synthetic_dataset(n: int, seed: int = 0, max_layers: int = 16, noise: float = 0.002):
    """``(archs, X, y)`` drawn from :func:`synthetic_architecture` with labelled accuracy."""
    rng = np.random.default_rng(seed)
    max_inst = (max_layers - 1) // 3
    archs = [synthetic_architecture(rng, max_inst) for _ in range(n)]
    y = np.array([synthetic_accuracy(a) for a in archs]) + rng.normal(0.0, noise, n)
    X = ArchitectureEncoder(max_layers).transform(archs)
    return archs, X, y
