"""Regression surrogates for solve cost: Matern GP, CART tree, random forest, MLP.

All models share ``fit(X, y)`` / ``predict(X)`` and serialise to a versioned
JSON dict.  Features and labels are z-scored from training statistics inside
each model, so callers pass raw feature vectors.
"""

from __future__ import annotations

import json
import math
import os

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import gamma as gamma_fn
from scipy.special import kv

FORMAT_VERSION = 1
CLOSED_FORM_NU = (0.5, 1.5, 2.5)


class BadHyperparameter(ValueError):
    pass


class SingularKernel(RuntimeError):
    pass


class DimensionMismatch(ValueError):
    pass


class EmptyDataset(ValueError):
    pass


# -- kernels ------------------------------------------------------------


def _check_hyper(length: float, sigma_f: float) -> None:
    if not (length > 0 and sigma_f > 0):
        raise BadHyperparameter(f"length scale and signal std must be positive, got {length}, {sigma_f}")


def matern_from_distance(d, length: float, sigma_f: float, nu: float = 1.5) -> np.ndarray:
    """Closed-form Matern covariance for nu in {0.5, 1.5, 2.5}."""
    _check_hyper(length, sigma_f)
    r = np.asarray(d, dtype=float) / length
    if nu == 0.5:
        k = np.exp(-r)
    elif nu == 1.5:
        s = math.sqrt(3.0) * r
        k = (1.0 + s) * np.exp(-s)
    elif nu == 2.5:
        s = math.sqrt(5.0) * r
        k = (1.0 + s + s * s / 3.0) * np.exp(-s)
    else:
        raise BadHyperparameter(f"closed form needs nu in {CLOSED_FORM_NU}, got {nu}")
    return sigma_f**2 * k


def matern_general(d, length: float, sigma_f: float, nu: float) -> np.ndarray:
    """Gamma/Bessel form of the Matern covariance, valid for any nu > 0."""
    _check_hyper(length, sigma_f)
    if not nu > 0:
        raise BadHyperparameter(f"nu must be positive, got {nu}")
    r = np.atleast_1d(np.asarray(d, dtype=float)) / length
    out = np.ones_like(r)
    pos = r > 0
    s = math.sqrt(2.0 * nu) * r[pos]
    out[pos] = 2.0 ** (1.0 - nu) / gamma_fn(nu) * s**nu * kv(nu, s)
    out = sigma_f**2 * out
    return out if np.ndim(d) else out[0]


def matern_kernel(a, b, length: float, sigma_f: float, nu: float = 1.5) -> float:
    d = float(np.linalg.norm(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)))
    return float(matern_from_distance(d, length, sigma_f, nu))


def pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    sq = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * a @ b.T
    return np.sqrt(np.maximum(sq, 0.0))


# -- standardisation ------------------------------------------------------


class Standardizer:
    """Column z-scores; zero-variance columns keep unit scale."""

    def __init__(self, mean=None, scale=None):
        self.mean = None if mean is None else np.asarray(mean, dtype=float)
        self.scale = None if scale is None else np.asarray(scale, dtype=float)

    def fit(self, x: np.ndarray) -> "Standardizer":
        x = np.asarray(x, dtype=float)
        self.mean = x.mean(axis=0)
        std = x.std(axis=0)
        self.scale = np.where(std > 1e-12, std, 1.0)
        return self

    def transform(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.scale

    def inverse(self, z):
        return np.asarray(z, dtype=float) * self.scale + self.mean

    def to_json(self) -> dict:
        return {"mean": np.atleast_1d(self.mean).tolist(), "scale": np.atleast_1d(self.scale).tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "Standardizer":
        return cls(d["mean"], d["scale"])


def _as_xy(x, y=None):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] == 0:
        raise EmptyDataset("empty dataset")
    if y is None:
        return x
    y = np.asarray(y, dtype=float).ravel()
    if y.shape[0] != x.shape[0]:
        raise DimensionMismatch(f"{x.shape[0]} inputs but {y.shape[0]} labels")
    return x, y


class _Fitted:
    dim: int

    def _inputs(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None, :] if self.dim > 1 or x.shape[0] == 1 else x[:, None]
        if x.shape[1] != self.dim:
            raise DimensionMismatch(f"expected {self.dim} features, got {x.shape[1]}")
        return x


# -- Gaussian process -------------------------------------------------------


class GaussianProcess(_Fitted):
    """Isotropic Matern GP; hyperparameters by multi-start coordinate search on the evidence.

    With ``noise_free`` the noise level is pinned at zero and only the
    Cholesky jitter regularises the kernel matrix.
    """

    kind = "gp"
    LOG_BOUNDS = {"length": (math.log(1e-2), math.log(1e2)), "sigma_f": (math.log(1e-2), math.log(1e1)), "sigma_n": (math.log(1e-6), 0.0)}

    def __init__(self, nu=1.5, restarts=5, evals=40, noise_free=False, seed=0, jitter=1e-8, max_jitter=1e-2):
        if nu not in CLOSED_FORM_NU:
            raise BadHyperparameter(f"nu must be one of {CLOSED_FORM_NU}")
        self.nu, self.restarts, self.evals = nu, restarts, evals
        self.noise_free, self.seed = noise_free, seed
        self.jitter0, self.max_jitter = jitter, max_jitter
        self.length = self.sigma_f = 1.0
        self.sigma_n = 0.0
        self.lml_trace: list[float] = []

    # evidence ---------------------------------------------------------
    def _factor(self, dist, length, sigma_f, sigma_n):
        k = matern_from_distance(dist, length, sigma_f, self.nu)
        jitter = self.jitter0
        while jitter <= self.max_jitter * (1 + 1e-9):
            try:
                return np.linalg.cholesky(k + (sigma_n**2 + jitter) * np.eye(len(k))), jitter
            except np.linalg.LinAlgError:
                jitter *= 10.0
        raise SingularKernel("kernel matrix not positive definite even with maximal jitter")

    def log_marginal_likelihood(self, length, sigma_f, sigma_n, dist=None, y=None) -> float:
        dist = self._dist if dist is None else dist
        y = self._y if y is None else y
        chol, _ = self._factor(dist, length, sigma_f, sigma_n)
        alpha = cho_solve((chol, True), y)
        return float(-0.5 * y @ alpha - np.sum(np.log(np.diag(chol))) - 0.5 * len(y) * math.log(2 * math.pi))

    def _search(self, dist, y):
        names = ["length", "sigma_f"] + ([] if self.noise_free else ["sigma_n"])
        bounds = np.array([self.LOG_BOUNDS[n] for n in names])
        rng = np.random.default_rng(self.seed)
        starts = [np.array([0.0, 0.0, math.log(0.1)][: len(names)])]
        starts += [rng.uniform(bounds[:, 0], bounds[:, 1]) for _ in range(self.restarts - 1)]

        def score(p):
            vals = dict(zip(names, np.exp(p)))
            try:
                return self.log_marginal_likelihood(vals["length"], vals["sigma_f"], vals.get("sigma_n", 0.0), dist, y)
            except SingularKernel:
                return -math.inf

        best_p, best = None, -math.inf
        trace = []
        for start in starts:
            p = np.clip(start, bounds[:, 0], bounds[:, 1])
            cur = score(p)
            used = 1
            step = 1.0
            if cur > best:
                best, best_p = cur, p.copy()
            trace.append(best)
            while used < self.evals and step > 1e-3:
                moved = False
                for c in range(len(names)):
                    for sgn in (1.0, -1.0):
                        if used >= self.evals:
                            break
                        q = p.copy()
                        q[c] = np.clip(q[c] + sgn * step, bounds[c, 0], bounds[c, 1])
                        if q[c] == p[c]:
                            continue
                        val = score(q)
                        used += 1
                        if val > cur:
                            p, cur, moved = q, val, True
                            if cur > best:
                                best, best_p = cur, p.copy()
                            trace.append(best)
                            break
                        trace.append(best)
                if not moved:
                    step *= 0.5
        if best_p is None:
            raise SingularKernel("no hyperparameter setting gave a factorisable kernel")
        vals = dict(zip(names, np.exp(best_p)))
        return vals["length"], vals["sigma_f"], vals.get("sigma_n", 0.0), trace

    def fit(self, x, y) -> "GaussianProcess":
        x, y = _as_xy(x, y)
        self.dim = x.shape[1]
        self.x_scaler = Standardizer().fit(x)
        self.y_scaler = Standardizer().fit(y[:, None])
        self._x = self.x_scaler.transform(x)
        self._y = self.y_scaler.transform(y[:, None]).ravel()
        self._dist = pairwise_distances(self._x, self._x)
        if np.allclose(self._y, 0.0):
            # constant target: any hyperparameters interpolate it; skip the search
            self.length, self.sigma_f, self.sigma_n = 1.0, 1.0, 0.0 if self.noise_free else 1e-3
            self.lml_trace = [self.log_marginal_likelihood(self.length, self.sigma_f, self.sigma_n)]
        else:
            self.length, self.sigma_f, self.sigma_n, self.lml_trace = self._search(self._dist, self._y)
        self._finish()
        return self

    def _finish(self):
        self._chol, self.jitter = self._factor(self._dist, self.length, self.sigma_f, self.sigma_n)
        self._alpha = cho_solve((self._chol, True), self._y)

    def predict_with_std(self, x) -> tuple[np.ndarray, np.ndarray]:
        z = self.x_scaler.transform(self._inputs(x))
        ks = matern_from_distance(pairwise_distances(z, self._x), self.length, self.sigma_f, self.nu)
        mean = ks @ self._alpha
        v = solve_triangular(self._chol, ks.T, lower=True)
        var = self.sigma_f**2 + self.sigma_n**2 - np.sum(v * v, axis=0)
        std = np.sqrt(np.maximum(var, 0.0))
        scale = float(self.y_scaler.scale[0])
        return mean * scale + float(self.y_scaler.mean[0]), std * scale

    def predict(self, x) -> np.ndarray:
        return self.predict_with_std(x)[0]

    def predict_std(self, x) -> np.ndarray:
        return self.predict_with_std(x)[1]

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "nu": self.nu,
            "options": {"restarts": self.restarts, "evals": self.evals, "noise_free": self.noise_free, "seed": self.seed},
            "length": self.length,
            "sigma_f": self.sigma_f,
            "sigma_n": self.sigma_n,
            "x_scaler": self.x_scaler.to_json(),
            "y_scaler": self.y_scaler.to_json(),
            "z_train": self._x.tolist(),  # standardised, so reloading is bit-exact
            "t_train": self._y.tolist(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "GaussianProcess":
        gp = cls(d["nu"], **d["options"])
        gp._x = np.asarray(d["z_train"], dtype=float)
        gp._y = np.asarray(d["t_train"], dtype=float)
        gp.dim = gp._x.shape[1]
        gp.x_scaler = Standardizer.from_json(d["x_scaler"])
        gp.y_scaler = Standardizer.from_json(d["y_scaler"])
        gp._dist = pairwise_distances(gp._x, gp._x)
        gp.length, gp.sigma_f, gp.sigma_n = d["length"], d["sigma_f"], d["sigma_n"]
        gp._finish()
        return gp


# -- CART -----------------------------------------------------------------


def _best_split(x: np.ndarray, y: np.ndarray, features):
    """Variance-reduction split; ties keep the first feature and lowest threshold."""
    n = len(y)
    best = (math.inf, -1, 0.0)
    total = y.sum()
    for f in features:
        order = np.argsort(x[:, f], kind="stable")
        xs, ys = x[order, f], y[order]
        csum = np.cumsum(ys)[:-1]
        csq = np.cumsum(ys * ys)[:-1]
        cnt = np.arange(1, n)
        valid = xs[1:] > xs[:-1]
        if not valid.any():
            continue
        left_sse = csq - csum**2 / cnt
        rsum = total - csum
        rsq = np.sum(ys * ys) - csq
        right_sse = rsq - rsum**2 / (n - cnt)
        sse = np.where(valid, left_sse + right_sse, math.inf)
        k = int(np.argmin(sse))
        if sse[k] < best[0] - 1e-12:
            best = (float(sse[k]), int(f), 0.5 * (xs[k] + xs[k + 1]))
    return best


class DecisionTree(_Fitted):
    """CART regression tree grown until leaves are pure or hold fewer than ``min_samples_split``."""

    kind = "dt"

    def __init__(self, min_samples_split: int = 2, max_features: int | None = None, seed: int = 0):
        self.min_samples_split = min_samples_split
        self.max_features = max_features
        self.seed = seed

    def fit(self, x, y) -> "DecisionTree":
        x, y = _as_xy(x, y)
        self.dim = x.shape[1]
        rng = np.random.default_rng(self.seed)
        self.feature, self.threshold, self.left, self.right, self.value = [], [], [], [], []
        stack = [(np.arange(len(y)), None, False)]
        while stack:
            idx, parent, is_right = stack.pop()
            node = len(self.value)
            if parent is not None:
                (self.right if is_right else self.left)[parent] = node
            ys = y[idx]
            self.value.append(float(ys.mean()))
            self.feature.append(-1)
            self.threshold.append(0.0)
            self.left.append(-1)
            self.right.append(-1)
            if len(idx) < self.min_samples_split or np.ptp(ys) <= 0.0:
                continue
            feats = range(self.dim)
            if self.max_features and self.max_features < self.dim:
                feats = sorted(rng.choice(self.dim, self.max_features, replace=False))
            _, f, thr = _best_split(x[idx], ys, feats)
            if f < 0:
                continue
            self.feature[node], self.threshold[node] = f, float(thr)
            mask = x[idx, f] <= thr
            # push right first so the left subtree gets the lower node ids
            stack.append((idx[~mask], node, True))
            stack.append((idx[mask], node, False))
        self._arrays()
        return self

    def _arrays(self):
        self._f = np.asarray(self.feature, dtype=int)
        self._t = np.asarray(self.threshold, dtype=float)
        self._l = np.asarray(self.left, dtype=int)
        self._r = np.asarray(self.right, dtype=int)
        self._v = np.asarray(self.value, dtype=float)

    def predict(self, x) -> np.ndarray:
        x = self._inputs(x)
        node = np.zeros(len(x), dtype=int)
        active = self._f[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            cur = node[rows]
            go_left = x[rows, self._f[cur]] <= self._t[cur]
            node[rows] = np.where(go_left, self._l[cur], self._r[cur])
            active = self._f[node] >= 0
        return self._v[node]

    @property
    def n_nodes(self) -> int:
        return len(self.value)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "dim": self.dim,
            "options": {"min_samples_split": self.min_samples_split, "max_features": self.max_features, "seed": self.seed},
            "feature": self.feature,
            "threshold": self.threshold,
            "left": self.left,
            "right": self.right,
            "value": self.value,
        }

    @classmethod
    def from_json(cls, d: dict) -> "DecisionTree":
        t = cls(**d["options"])
        t.dim = d["dim"]
        t.feature, t.threshold = list(d["feature"]), list(d["threshold"])
        t.left, t.right, t.value = list(d["left"]), list(d["right"]), list(d["value"])
        t._arrays()
        return t


class RandomForest(_Fitted):
    """Bootstrap-aggregated CART trees; prediction is the plain mean over trees."""

    kind = "rf"

    def __init__(self, n_trees: int = 100, max_features: int | None = None, seed: int = 0):
        self.n_trees, self.max_features, self.seed = n_trees, max_features, seed

    def fit(self, x, y) -> "RandomForest":
        x, y = _as_xy(x, y)
        self.dim = x.shape[1]
        seeds = np.random.SeedSequence(self.seed).generate_state(self.n_trees)
        self.tree_seeds = [int(s) for s in seeds]
        self.trees = []
        for s in self.tree_seeds:
            rng = np.random.default_rng(s)
            idx = rng.integers(0, len(y), len(y))
            self.trees.append(DecisionTree(max_features=self.max_features, seed=s).fit(x[idx], y[idx]))
        return self

    def predict(self, x) -> np.ndarray:
        x = self._inputs(x)
        return np.mean([t.predict(x) for t in self.trees], axis=0)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "dim": self.dim,
            "options": {"n_trees": self.n_trees, "max_features": self.max_features, "seed": self.seed},
            "tree_seeds": self.tree_seeds,
            "trees": [t.to_json() for t in self.trees],
        }

    @classmethod
    def from_json(cls, d: dict) -> "RandomForest":
        rf = cls(**d["options"])
        rf.dim = d["dim"]
        rf.tree_seeds = list(d["tree_seeds"])
        rf.trees = [DecisionTree.from_json(t) for t in d["trees"]]
        return rf


# -- MLP ------------------------------------------------------------------


class MLP(_Fitted):
    """tanh multilayer perceptron, squared loss with L2 penalty, trained by Adam.

    The loss mirrors the usual convention ``0.5*mean(err^2) + 0.5*alpha*|W|^2 / n``.
    """

    kind = "mlp"

    def __init__(self, hidden=(32, 32, 32), alpha=0.01, lr=1e-4, epochs=500, batch_size=32, seed=0):
        self.hidden = tuple(int(h) for h in hidden)
        self.alpha, self.lr, self.epochs = alpha, lr, epochs
        self.batch_size, self.seed = batch_size, seed

    def _init(self, dim, rng):
        sizes = [dim, *self.hidden, 1]
        self.weights, self.biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
            self.biases.append(rng.uniform(-bound, bound, fan_out))

    def _forward(self, z):
        acts = [z]
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            acts.append(np.tanh(acts[-1] @ w + b))
        out = acts[-1] @ self.weights[-1] + self.biases[-1]
        return acts, out.ravel()

    def loss_and_grad(self, z, t, n_total=None):
        """Loss and gradients (weights, biases) on standardised inputs ``z`` and targets ``t``."""
        n = len(t)
        n_total = n if n_total is None else n_total
        acts, out = self._forward(z)
        err = out - t
        loss = 0.5 * float(np.mean(err**2)) + 0.5 * self.alpha * sum(float(np.sum(w * w)) for w in self.weights) / n_total
        delta = (err / n)[:, None]
        gw = [None] * len(self.weights)
        gb = [None] * len(self.biases)
        for layer in range(len(self.weights) - 1, -1, -1):
            gw[layer] = acts[layer].T @ delta + self.alpha * self.weights[layer] / n_total
            gb[layer] = delta.sum(axis=0)
            if layer:
                delta = (delta @ self.weights[layer].T) * (1.0 - acts[layer] ** 2)
        return loss, gw, gb

    def fit(self, x, y) -> "MLP":
        x, y = _as_xy(x, y)
        self.dim = x.shape[1]
        self.x_scaler = Standardizer().fit(x)
        self.y_scaler = Standardizer().fit(y[:, None])
        z = self.x_scaler.transform(x)
        t = self.y_scaler.transform(y[:, None]).ravel()
        rng = np.random.default_rng(self.seed)
        self._init(self.dim, rng)
        self.loss_curve = []
        if np.ptp(t) == 0.0:
            # constant target: a zero output layer reproduces it exactly
            self.weights[-1][:] = 0.0
            self.biases[-1][:] = 0.0
            return self
        params = self.weights + self.biases
        m = [np.zeros_like(p) for p in params]
        v = [np.zeros_like(p) for p in params]
        b1, b2, eps = 0.9, 0.999, 1e-8
        step = 0
        n = len(t)
        bs = min(self.batch_size, n)
        for _ in range(self.epochs):
            order = rng.permutation(n)
            total = 0.0
            for s in range(0, n, bs):
                idx = order[s : s + bs]
                loss, gw, gb = self.loss_and_grad(z[idx], t[idx], n)
                total += loss * len(idx)
                step += 1
                for p, g, mi, vi in zip(params, gw + gb, m, v):
                    mi *= b1
                    mi += (1 - b1) * g
                    vi *= b2
                    vi += (1 - b2) * g * g
                    mhat = mi / (1 - b1**step)
                    vhat = vi / (1 - b2**step)
                    p -= self.lr * mhat / (np.sqrt(vhat) + eps)
            self.loss_curve.append(total / n)
        return self

    def predict(self, x) -> np.ndarray:
        z = self.x_scaler.transform(self._inputs(x))
        _, out = self._forward(z)
        return self.y_scaler.inverse(out[:, None]).ravel()

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "dim": self.dim,
            "options": {
                "hidden": list(self.hidden),
                "alpha": self.alpha,
                "lr": self.lr,
                "epochs": self.epochs,
                "batch_size": self.batch_size,
                "seed": self.seed,
            },
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "x_scaler": self.x_scaler.to_json(),
            "y_scaler": self.y_scaler.to_json(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "MLP":
        net = cls(**d["options"])
        net.dim = d["dim"]
        net.weights = [np.asarray(w, dtype=float) for w in d["weights"]]
        net.biases = [np.asarray(b, dtype=float) for b in d["biases"]]
        net.x_scaler = Standardizer.from_json(d["x_scaler"])
        net.y_scaler = Standardizer.from_json(d["y_scaler"])
        return net


# -- registry and persistence ----------------------------------------------------

MODELS = {cls.kind: cls for cls in (GaussianProcess, DecisionTree, RandomForest, MLP)}


def make_model(kind: str, seed: int = 0, **options):
    if kind not in MODELS:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {sorted(MODELS)}")
    if kind == "gp":
        return GaussianProcess(seed=seed, **options)
    return MODELS[kind](seed=seed, **options)


def model_to_json(model) -> dict:
    return {"format_version": FORMAT_VERSION, "model": model.to_json()}


def model_from_json(d: dict):
    if d.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {d.get('format_version')!r}")
    body = d["model"]
    return MODELS[body["kind"]].from_json(body)


def save_model(model, path: str) -> None:
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w") as fh:
        json.dump(model_to_json(model), fh)
    os.replace(tmp, path)


def load_model(path: str):
    with open(path) as fh:
        return model_from_json(json.load(fh))
