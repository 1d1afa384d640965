"""Classical baselines: logistic regression, Gaussian naive Bayes, and a
random forest. All three honor the same class weights as the neural nets so
the comparison is about the model family, not the loss weighting."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import ClassWeights, MfccDataset
from .errors import ConfigError, ShapeError, WeightingError
from .seeding import derive_seed

VARIANTS = ("logreg", "gnb", "rforest")

GNB_VAR_FLOOR = 1e-9


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))


@dataclass
class LogRegModel:
    w: np.ndarray
    b: float
    iterations: int
    converged: bool


def fit_logreg(X, y, weights: ClassWeights, tol: float = 1e-6,
               max_iter: int = 10000) -> LogRegModel:
    """Full-batch gradient descent on weighted cross-entropy.

    The step size starts at 1 and halves whenever a step would raise the
    loss, growing gently after accepted steps; descent stops when the
    gradient's max component drops below tol.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n = len(y)
    sample_w = np.where(y == 1.0, weights.w_pos, weights.w_neg)

    def loss_grad(w, b):
        p = _sigmoid(X @ w + b)
        eps = 1e-12
        loss = -np.mean(sample_w * (y * np.log(p + eps)
                                    + (1.0 - y) * np.log(1.0 - p + eps)))
        r = sample_w * (p - y) / n
        return loss, X.T @ r, float(np.sum(r))

    w = np.zeros(X.shape[1])
    b = 0.0
    lr = 1.0
    loss, gw, gb = loss_grad(w, b)
    it = 0
    converged = False
    while it < max_iter:
        it += 1
        if max(np.max(np.abs(gw)), abs(gb)) < tol:
            converged = True
            break
        while lr > 1e-12:
            w2 = w - lr * gw
            b2 = b - lr * gb
            loss2, gw2, gb2 = loss_grad(w2, b2)
            if loss2 <= loss:
                w, b, loss, gw, gb = w2, b2, loss2, gw2, gb2
                lr *= 1.1
                break
            lr *= 0.5
        else:
            break  # step size exhausted; gradient direction no longer helps
    return LogRegModel(w=w, b=b, iterations=it, converged=converged)


@dataclass
class GnbModel:
    means: np.ndarray  # [2, d]
    variances: np.ndarray  # [2, d], floored
    log_priors: np.ndarray  # [2]


def fit_gnb(X, y, weights: ClassWeights) -> GnbModel:
    """Per-class diagonal Gaussians with weight-adjusted priors.

    Within a class every row carries the same weight, so the weighted
    moments reduce to plain per-class mean and population variance; the
    weights still tilt the priors.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).reshape(-1)
    means = np.zeros((2, X.shape[1]))
    variances = np.zeros((2, X.shape[1]))
    mass = np.zeros(2)
    for cls, w_cls in ((0, weights.w_neg), (1, weights.w_pos)):
        rows = X[y == cls]
        if len(rows) == 0:
            raise WeightingError(f"class {cls} absent, cannot fit Gaussians")
        means[cls] = rows.mean(axis=0)
        variances[cls] = np.maximum(rows.var(axis=0), GNB_VAR_FLOOR)
        mass[cls] = w_cls * len(rows)
    return GnbModel(means=means, variances=variances,
                    log_priors=np.log(mass / mass.sum()))


def gnb_scores(model: GnbModel, X) -> np.ndarray:
    """Posterior probability of class 1 per row."""
    X = np.asarray(X, dtype=np.float64)
    log_post = np.zeros((len(X), 2))
    for cls in (0, 1):
        var = model.variances[cls]
        diff = X - model.means[cls]
        log_like = -0.5 * np.sum(np.log(2.0 * np.pi * var) + diff * diff / var,
                                 axis=1)
        log_post[:, cls] = model.log_priors[cls] + log_like
    shifted = log_post - log_post.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e[:, 1] / e.sum(axis=1)


@dataclass
class TreeNode:
    feature: int = -1  # -1 marks a leaf
    threshold: float = 0.0
    left: int = -1
    right: int = -1
    p_positive: float = 0.0


class DecisionTree:
    """Axis-aligned splits chosen by weighted Gini impurity.

    Nodes consider a random feature subset; candidate thresholds are
    midpoints between consecutive distinct sorted values. Built with an
    explicit stack so deep trees cannot overflow recursion.
    """

    def __init__(self, max_features: int):
        self.max_features = max_features
        self.nodes: list[TreeNode] = []

    def fit(self, X, y, sample_w, rng: np.random.Generator) -> "DecisionTree":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64).reshape(-1)
        sample_w = np.asarray(sample_w, dtype=np.float64).reshape(-1)
        self.nodes = [TreeNode()]
        stack = [(0, np.arange(len(y)))]
        while stack:
            node_id, idx = stack.pop()
            self._grow(node_id, idx, X, y, sample_w, rng, stack)
        return self

    def _grow(self, node_id, idx, X, y, sample_w, rng, stack):
        node = self.nodes[node_id]
        w = sample_w[idx]
        total = w.sum()
        w_pos = w[y[idx] == 1].sum()
        node.p_positive = w_pos / total
        if len(idx) < 2 or w_pos == 0.0 or w_pos == total:
            return  # pure or unsplittable: stays a leaf

        n_feats = X.shape[1]
        feats = rng.choice(n_feats, size=min(self.max_features, n_feats),
                           replace=False)
        best = None  # (gini, feature, threshold)
        for f in feats:
            vals = X[idx, f]
            order = np.argsort(vals, kind="stable")
            sv = vals[order]
            sw = w[order]
            sp = np.where(y[idx][order] == 1, sw, 0.0)
            cw = np.cumsum(sw)
            cp = np.cumsum(sp)
            # split after position i is valid when the value changes there
            valid = np.flatnonzero(sv[:-1] < sv[1:])
            if len(valid) == 0:
                continue
            wl = cw[valid]
            wpl = cp[valid]
            wr = total - wl
            wpr = w_pos - wpl
            gini_l = 1.0 - ((wpl / wl) ** 2 + ((wl - wpl) / wl) ** 2)
            gini_r = 1.0 - ((wpr / wr) ** 2 + ((wr - wpr) / wr) ** 2)
            score = (wl * gini_l + wr * gini_r) / total
            j = int(np.argmin(score))
            if best is None or score[j] < best[0]:
                cut = valid[j]
                best = (float(score[j]), int(f), float((sv[cut] + sv[cut + 1]) / 2.0))
        if best is None:
            return  # all candidate features constant

        _, feature, threshold = best
        go_left = X[idx, feature] <= threshold
        node.feature = feature
        node.threshold = threshold
        node.left = len(self.nodes)
        self.nodes.append(TreeNode())
        node.right = len(self.nodes)
        self.nodes.append(TreeNode())
        stack.append((node.left, idx[go_left]))
        stack.append((node.right, idx[~go_left]))

    def leaf_scores(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = np.empty(len(X))
        for i, row in enumerate(X):
            node = self.nodes[0]
            while node.feature >= 0:
                node = self.nodes[node.left if row[node.feature] <= node.threshold
                                  else node.right]
            out[i] = node.p_positive
        return out

    def votes(self, X) -> np.ndarray:
        return (self.leaf_scores(X) >= 0.5).astype(np.float64)


@dataclass
class ForestModel:
    trees: list[DecisionTree]
    n_features: int


def fit_forest(X, y, weights: ClassWeights, seed: int, n_trees: int = 100,
               bootstrap: bool = True, max_features: int | None = None) -> ForestModel:
    """Bag of decision trees; each tree gets its own derived seed and, when
    bootstrapping, its own with-replacement resample."""
    if n_trees < 1:
        raise ConfigError(f"n_trees must be positive, got {n_trees}")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if max_features is None:
        max_features = max(1, round(np.sqrt(X.shape[1])))
    sample_w = np.where(y == 1, weights.w_pos, weights.w_neg)
    trees = []
    for i in range(n_trees):
        rng = np.random.default_rng(derive_seed(seed, "tree", i))
        if bootstrap:
            idx = rng.integers(0, len(y), size=len(y))
        else:
            idx = np.arange(len(y))
        tree = DecisionTree(max_features).fit(X[idx], y[idx], sample_w[idx], rng)
        trees.append(tree)
    return ForestModel(trees=trees, n_features=X.shape[1])


def forest_scores(model: ForestModel, X) -> np.ndarray:
    """Fraction of trees voting positive."""
    votes = np.zeros(len(X))
    for tree in model.trees:
        votes += tree.votes(X)
    return votes / len(model.trees)


@dataclass
class BaselineModel:
    variant: str
    inner: object
    n_features: int


def fit_baseline(variant: str, train: MfccDataset, weights: ClassWeights,
                 seed: int, n_trees: int = 100, bootstrap: bool = True) -> BaselineModel:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown baseline {variant!r}, expected one of {VARIANTS}")
    X, y = train.features, train.labels
    if variant == "logreg":
        inner = fit_logreg(X, y, weights)
    elif variant == "gnb":
        inner = fit_gnb(X, y, weights)
    else:
        inner = fit_forest(X, y, weights, seed=seed, n_trees=n_trees,
                           bootstrap=bootstrap)
    return BaselineModel(variant=variant, inner=inner, n_features=X.shape[1])


def predict_baseline(model: BaselineModel, X) -> tuple[np.ndarray, np.ndarray]:
    """(labels, scores): scores are probabilities, or vote fractions for the
    forest; labels threshold the scores at 0.5."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ShapeError(
            f"expected [n, {model.n_features}] features, got {X.shape}"
        )
    if model.variant == "logreg":
        scores = _sigmoid(X @ model.inner.w + model.inner.b)
    elif model.variant == "gnb":
        scores = gnb_scores(model.inner, X)
    else:
        scores = forest_scores(model.inner, X)
    return (scores >= 0.5).astype(np.int64), scores
