"""Linear Poisson Models: histograms as non-negative sums of fixed PMF components.

A histogram ``H`` (bins ``X``) is modelled as ``H_X ~ Poisson(sum_k P[X, k] Q_k)``.
Training learns the component PMFs ``P[:, k]`` of each class from example
histograms; fitting estimates the quantities ``Q`` of a new histogram by
maximising the extended likelihood

    ln L = sum_X H_X ln(sum_k P[X, k] Q_k) - sum_k Q_k

with the multiplicative EM update, finished off by safeguarded Newton steps.
Errors on ``Q`` combine the Poisson noise of the fitted histogram (data term)
and of the training histograms behind each PMF (model term); both are
linearised at the fixed point through the implicit function theorem.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .scores import HistogramSpec, ScoreHistogram

log = logging.getLogger(__name__)

CLASSES = ("true", "false")
PROB_FLOOR = 1e-9
DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10_000
DEFAULT_CHI2_TARGET = 1.2
DEFAULT_MAX_COMPONENTS = 10
DEFAULT_RESTARTS = 5


class SupportError(ValueError):
    """Occupied histogram bins where every model component has zero probability."""

    def __init__(self, bins):
        self.bins = list(map(int, bins))
        shown = self.bins[:10]
        super().__init__(f"histogram has entries in bins with zero model density: {shown}"
                         + (" ..." if len(self.bins) > 10 else ""))


class ConvergenceError(RuntimeError):
    def __init__(self, msg, q, trace):
        super().__init__(msg)
        self.q = q
        self.trace = trace


class SingularCurvatureError(np.linalg.LinAlgError):
    pass


@dataclass
class LpmModel:
    spec: HistogramSpec
    components: dict            # class -> (n_bins, K_c) PMFs
    training_histograms: dict   # class -> (T_c, n_bins) counts
    component_histograms: dict  # class -> (n_bins, K_c) training counts attributed to each PMF
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for c in CLASSES:
            p = np.asarray(self.components[c], dtype=float)
            if p.ndim != 2 or p.shape[0] != self.spec.n_bins or p.shape[1] < 1:
                raise ValueError(f"class {c}: components must be (n_bins, K>=1)")
            if np.any(p < 0) or not np.allclose(p.sum(axis=0), 1.0, atol=1e-9):
                raise ValueError(f"class {c}: components must be normalised PMFs")
            self.components[c] = p
            self.component_histograms[c] = np.asarray(self.component_histograms[c], dtype=float)
            self.training_histograms[c] = np.asarray(self.training_histograms[c], dtype=float)

    @property
    def component_count(self) -> dict:
        return {c: self.components[c].shape[1] for c in CLASSES}

    @property
    def P(self) -> np.ndarray:
        return np.hstack([self.components[c] for c in CLASSES])

    @property
    def class_of_component(self) -> np.ndarray:
        return np.concatenate([[i] * self.components[c].shape[1] for i, c in enumerate(CLASSES)])

    @property
    def attributed_histograms(self) -> np.ndarray:
        return np.hstack([self.component_histograms[c] for c in CLASSES])

    def to_json(self) -> dict:
        return {
            "spec": self.spec.to_json(),
            "classes": [{
                "name": c,
                "components": self.components[c].T.tolist(),
                "component_histograms": self.component_histograms[c].T.tolist(),
                "training_histograms": self.training_histograms[c].tolist(),
            } for c in CLASSES],
            "meta": self.meta,
        }

    @classmethod
    def from_json(cls, d: dict) -> "LpmModel":
        spec = HistogramSpec.from_json(d["spec"])
        comps, chist, thist = {}, {}, {}
        for entry in d["classes"]:
            c = entry["name"]
            comps[c] = np.asarray(entry["components"], dtype=float).T
            chist[c] = np.asarray(entry["component_histograms"], dtype=float).T
            thist[c] = np.asarray(entry["training_histograms"], dtype=float)
        return cls(spec, comps, thist, chist, d.get("meta", {}))


@dataclass
class QuantityEstimate:
    q: np.ndarray
    class_totals: np.ndarray
    covariance: np.ndarray | None = None
    class_covariance: np.ndarray | None = None
    c_data: np.ndarray | None = None
    c_model: np.ndarray | None = None
    loglik: float = float("nan")
    n_iter: int = 0
    trace: list = field(default_factory=list, repr=False)

    @property
    def class_sigma(self) -> np.ndarray:
        return np.sqrt(np.diag(self.class_covariance))

    def total(self, cls: str) -> float:
        return float(self.class_totals[CLASSES.index(cls)])

    def sigma(self, cls: str) -> float:
        i = CLASSES.index(cls)
        return float(np.sqrt(self.class_covariance[i, i]))


def _as_counts(hist) -> np.ndarray:
    if isinstance(hist, ScoreHistogram):
        return hist.counts.astype(float)
    return np.asarray(hist, dtype=float)


def _as_matrix(model) -> np.ndarray:
    return model.P if isinstance(model, LpmModel) else np.asarray(model, dtype=float)


def eml_log_likelihood(model, q, hist) -> float:
    """Extended log likelihood of quantities ``q`` for histogram ``hist``."""
    P = _as_matrix(model)
    H = _as_counts(hist)
    q = np.asarray(q, dtype=float)
    if np.any(q < 0):
        raise ValueError("quantities must be non-negative")
    mu = P @ q
    occ = H > 0
    bad = np.flatnonzero(occ & (mu <= 0))
    if bad.size:
        raise SupportError(bad)
    return float(np.sum(H[occ] * np.log(mu[occ])) - q.sum())


def _loglik(Po, Ho, q):
    mu = Po @ q
    if np.any(mu <= 0):
        return -np.inf
    return float(Ho @ np.log(mu) - q.sum())


def _newton_step(Po, Ho, q, L):
    """One safeguarded Newton step on the non-zero quantities; never lowers ``L``."""
    active = q > 0
    if not active.any():
        return q, L
    for _ in range(2):
        Pa = Po[:, active]
        mu = Pa @ q[active]
        w = Ho / mu
        g = Pa.T @ w - 1.0
        info = (Pa * (w / mu)[:, None]).T @ Pa
        try:
            step = np.linalg.solve(info, g)
        except np.linalg.LinAlgError:
            return q, L
        q_new = q.copy()
        q_new[active] = q[active] + step
        neg = q_new < 0
        if not neg.any():
            break
        # components driven below zero sit on the boundary: pin them at zero and retry
        active = active & ~neg
        if not active.any():
            return q, L
    else:
        return q, L
    t = 1.0
    for _ in range(30):
        cand = np.where(active, q + t * (q_new - q), 0.0)
        Lc = _loglik(Po, Ho, cand)
        if Lc >= L:
            return cand, Lc
        t *= 0.5
    return q, L


def fit_quantities(model, hist, init=None, tol: float = DEFAULT_TOL,
                   max_iter: int = DEFAULT_MAX_ITER, newton: bool = True) -> QuantityEstimate:
    """Maximise the extended likelihood over ``q >= 0`` with EM.

    Converged when the relative change of ``ln L`` stays below ``tol`` for three
    consecutive iterations.  Each iteration is an EM update, optionally
    followed by a Newton step that is only accepted if ``ln L`` does not drop,
    so the recorded trace is non-decreasing.
    """
    P = _as_matrix(model)
    H = _as_counts(hist)
    if P.shape[0] != H.shape[0]:
        raise ValueError("histogram and model have different bin counts")
    if isinstance(model, LpmModel) and isinstance(hist, ScoreHistogram) and hist.spec != model.spec:
        raise ValueError("histogram spec differs from the model spec")
    K = P.shape[1]
    n = H.sum()
    cls_idx = model.class_of_component if isinstance(model, LpmModel) else np.zeros(K, int)
    if n == 0:
        q = np.zeros(K)
        return QuantityEstimate(q, _class_sums(q, cls_idx), loglik=0.0, trace=[0.0])
    occ = H > 0
    Po, Ho = P[occ], H[occ]
    bad = np.flatnonzero(occ)[(Po.sum(axis=1) <= 0)]
    if bad.size:
        raise SupportError(bad)

    q = np.full(K, n / K) if init is None else np.array(init, dtype=float)
    if np.any(q < 0) or q.shape != (K,):
        raise ValueError("init must be a non-negative vector with one entry per component")
    L = _loglik(Po, Ho, q)
    if not np.isfinite(L):
        q = np.full(K, n / K)
        L = _loglik(Po, Ho, q)
    trace = [L]
    streak = 0
    for it in range(1, max_iter + 1):
        mu = Po @ q
        q = q * (Po.T @ (Ho / mu))
        L_em = _loglik(Po, Ho, q)
        if newton:
            q, L_em = _newton_step(Po, Ho, q, L_em)
        rel = abs(L_em - L) / max(abs(L_em), 1.0)
        L = L_em
        trace.append(L)
        streak = streak + 1 if rel < tol else 0
        if streak >= 3:
            # KKT check: a pinned component with positive gradient must be released
            g = Po.T @ (Ho / (Po @ q)) - 1.0
            stuck = (q == 0) & (g > 1e-6)
            if not stuck.any():
                break
            # a small enough release raises ln L since the gradient is positive
            eps = n / K * 1e-3
            for _ in range(60):
                cand = np.where(stuck, eps, q)
                Lc = _loglik(Po, Ho, cand)
                if Lc >= L:
                    break
                eps *= 0.5
            else:
                break
            q, L = cand, Lc
            trace.append(L)
            streak = 0
    else:
        raise ConvergenceError(f"EM did not converge in {max_iter} iterations", q, trace)
    return QuantityEstimate(q, _class_sums(q, cls_idx), loglik=L, n_iter=it, trace=trace)


def _class_sums(q, cls_idx):
    return np.bincount(cls_idx, weights=q, minlength=max(cls_idx.max() + 1, 1) if len(cls_idx) else 1)


# training ----------------------------------------------------------------

def _joint_loglik(h, P, W):
    mu = W @ P.T
    occ = h > 0
    return float(np.sum(h[occ] * np.log(mu[occ])) - W.sum())


def _train_class_em(h, K, rng, tol, max_iter, restarts):
    """Joint EM over PMFs ``P (B, K)`` and per-histogram weights ``W (T, K)``."""
    T, B = h.shape
    pooled = h.sum(axis=0)
    tot = h.sum(axis=1)
    if K == 1:
        P = (pooled / pooled.sum())[:, None]
        W = tot[:, None].astype(float)
        return P, W, _joint_loglik(h, P, W), True
    best = None
    for _ in range(restarts):
        P = pooled[:, None] * rng.gamma(1.0, size=(B, K)) + 1e-12
        P /= P.sum(axis=0)
        W = np.repeat(tot[:, None] / K, K, axis=1) * rng.uniform(0.5, 1.5, size=(T, K))
        L = _joint_loglik(h, P, W)
        streak, converged = 0, False
        for _ in range(max_iter):
            mu = W @ P.T
            r = np.divide(h, mu, out=np.zeros_like(mu), where=h > 0)
            W_new = W * (r @ P)
            P_new = P * (r.T @ W)
            P_new /= P_new.sum(axis=0)
            P, W = P_new, W_new
            L_new = _joint_loglik(h, P, W)
            streak = streak + 1 if abs(L_new - L) / max(abs(L_new), 1.0) < tol else 0
            L = L_new
            if streak >= 3:
                converged = True
                break
        if best is None or L > best[2]:
            best = (P, W, L, converged)
    return best


def _attributed(h, P, W):
    """Training counts attributed to each component by EM responsibilities."""
    mu = W @ P.T
    r = np.divide(h, mu, out=np.zeros_like(mu), where=h > 0)
    return P * (r.T @ W)


def chi2_per_dof(h, P, W) -> tuple[float, int]:
    """Pearson chi-square per degree of freedom of a class fit over its occupied bins."""
    T, B = h.shape
    K = P.shape[1]
    occ = h.sum(axis=0) > 0
    n_occ = int(occ.sum())
    dof = n_occ * T - K * (n_occ - 1) - K * T
    if dof <= 0:
        raise ValueError(f"{n_occ} occupied bins x {T} histograms cannot support {K} components")
    mu = (W @ P.T)[:, occ]
    hh = h[:, occ]
    chi2 = np.sum((hh - mu) ** 2 / np.maximum(mu, PROB_FLOOR))
    return float(chi2 / dof), dof


def _floor(P):
    P = np.maximum(P, PROB_FLOOR)
    return P / P.sum(axis=0)


def train_class(hists, rng, chi2_target=DEFAULT_CHI2_TARGET, max_components=DEFAULT_MAX_COMPONENTS,
                restarts=DEFAULT_RESTARTS, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Add components until chi-square per dof is at most ``chi2_target``.

    Returns ``(P, attributed_counts, trace)`` where ``trace`` lists the
    chi-square per dof reached at each component count tried.
    """
    h = np.asarray(hists, dtype=float)
    if h.ndim != 2 or h.shape[0] < 1:
        raise ValueError("need at least one training histogram per class")
    if h.sum() <= 0:
        raise ValueError("training histograms are empty")
    trace = []
    chosen = None
    for K in range(1, max_components + 1):
        try:
            P, W, L, conv = _train_class_em(h, K, rng, tol, max_iter, restarts)
            c2, dof = chi2_per_dof(h, P, W)
        except ValueError:
            if chosen is None:
                raise
            break
        trace.append({"components": K, "chi2_per_dof": c2, "dof": dof, "loglik": L,
                      "converged": bool(conv)})
        chosen = (P, W)
        if c2 <= chi2_target:
            break
    P, W = chosen
    return _floor(P), _attributed(h, P, W), trace


def _stack_hists(hists, spec):
    out = []
    for hh in hists:
        if isinstance(hh, ScoreHistogram):
            if spec is not None and hh.spec != spec:
                raise ValueError("training histograms must share one spec")
            out.append(hh.counts)
        else:
            out.append(np.asarray(hh))
    return np.asarray(out, dtype=float)


def train(true_hists, false_hists, chi2_target: float = DEFAULT_CHI2_TARGET,
          max_components: int = DEFAULT_MAX_COMPONENTS, restarts: int = DEFAULT_RESTARTS,
          seed=0, spec: HistogramSpec | None = None, tol: float = DEFAULT_TOL,
          max_iter: int = DEFAULT_MAX_ITER) -> LpmModel:
    """Train one set of PMF components per class from labelled example histograms."""
    if len(true_hists) == 0 or len(false_hists) == 0:
        raise ValueError("need at least one histogram per class")
    if spec is None:
        first = true_hists[0]
        if not isinstance(first, ScoreHistogram):
            raise ValueError("pass spec= when training from raw count arrays")
        spec = first.spec
    rng = np.random.default_rng(seed)
    comps, attr, thists, meta = {}, {}, {}, {"seed": seed, "chi2_target": chi2_target,
                                              "restarts": restarts, "chi2_trace": {}}
    for c, hs in zip(CLASSES, (true_hists, false_hists)):
        h = _stack_hists(hs, spec)
        if h.shape[1] != spec.n_bins:
            raise ValueError("training histogram size does not match the spec")
        P, A, trace = train_class(h, rng, chi2_target, max_components, restarts, tol, max_iter)
        comps[c], attr[c], thists[c] = P, A, h
        meta["chi2_trace"][c] = trace
        log.debug("class %s: %d components, chi2/dof %.3f", c, P.shape[1], trace[-1]["chi2_per_dof"])
    return LpmModel(spec, comps, thists, attr, meta)


# error propagation -------------------------------------------------------

def quantity_jacobians(P, H, q, active=None):
    """Derivatives of the fitted quantities at an interior fixed point.

    Returns ``(active, info_inv, dq_dH, dq_dP)`` where ``dq_dH`` is
    ``(n_active, B)`` and ``dq_dP[k]`` is the ``(n_active, B)`` derivative of
    the active quantities with respect to column ``k`` of ``P``.
    """
    P = np.asarray(P, dtype=float)
    H = np.asarray(H, dtype=float)
    q = np.asarray(q, dtype=float)
    if active is None:
        active = q > 0
    idx = np.flatnonzero(active)
    Pa = P[:, idx]
    mu = P @ q
    safe = mu > 0
    inv_mu = np.where(safe, 1.0 / np.where(safe, mu, 1.0), 0.0)
    w2 = H * inv_mu ** 2
    info = (Pa * w2[:, None]).T @ Pa
    cond = np.linalg.cond(info) if info.size else 0.0
    if info.size and not np.isfinite(cond) or cond > 1e13:
        raise SingularCurvatureError(
            "likelihood curvature is singular at the fit; try fewer components")
    info_inv = np.linalg.inv(info)
    info_inv = 0.5 * (info_inv + info_inv.T)
    dq_dH = info_inv @ (Pa * inv_mu[:, None]).T
    dq_dP = {}
    base = H * inv_mu           # dg_k/dP[Y, k] for k == i
    cross = H * inv_mu ** 2     # times P[Y, i] q_k
    for j, k in enumerate(idx):
        G = -(Pa * cross[:, None]).T * q[k]
        G[j] += base
        dq_dP[k] = info_inv @ G
    return idx, info_inv, dq_dH, dq_dP


def propagate_errors(model: LpmModel, hist, q_fit) -> QuantityEstimate:
    """Covariance of the fitted quantities: data term plus training (model) term."""
    if isinstance(q_fit, QuantityEstimate):
        est = q_fit
        q = np.asarray(q_fit.q, dtype=float)
    else:
        q = np.asarray(q_fit, dtype=float)
        est = QuantityEstimate(q, _class_sums(q, model.class_of_component))
    P = model.P
    H = _as_counts(hist)
    K = P.shape[1]
    cls_idx = model.class_of_component
    S = np.zeros((len(CLASSES), K))
    S[cls_idx, np.arange(K)] = 1.0
    if H.sum() == 0 or not np.any(q > 0):
        z = np.zeros((K, K))
        return QuantityEstimate(q, S @ q, z, np.zeros((2, 2)), z, z.copy(), est.loglik,
                                est.n_iter, est.trace)
    idx, _, dq_dH, dq_dP = quantity_jacobians(P, H, q)
    c_data_a = (dq_dH * H) @ dq_dH.T

    A = model.attributed_histograms
    c_model_a = np.zeros_like(c_data_a)
    for k, D in dq_dP.items():
        Nk = A[:, k].sum()
        if Nk <= 0:
            continue
        # P[:, k] = A[:, k] / N_k  =>  dP[Y, k]/dA[X, k] = (delta_XY - P[Y, k]) / N_k
        M = (D - (D @ P[:, k])[:, None]) / Nk
        c_model_a += (M * A[:, k]) @ M.T

    c_data = np.zeros((K, K))
    c_model = np.zeros((K, K))
    c_data[np.ix_(idx, idx)] = 0.5 * (c_data_a + c_data_a.T)
    c_model[np.ix_(idx, idx)] = 0.5 * (c_model_a + c_model_a.T)
    cov = c_data + c_model
    return QuantityEstimate(q, S @ q, cov, S @ cov @ S.T, c_data, c_model, est.loglik,
                            est.n_iter, est.trace)


def correct(model: LpmModel, hist, init=None) -> QuantityEstimate:
    """Fit ``hist`` and attach the propagated covariance."""
    est = fit_quantities(model, hist, init)
    return propagate_errors(model, hist, est)
