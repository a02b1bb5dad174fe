"""Margin-separable multiclass linear classification: losses, subgradient
training, closed-form generalization bounds, and the bound-comparison merge rule.

Labels follow a hard-margin linear rule: the true class c of a point is the
one coordinate with beta_c' x < 0 while every other class score exceeds the
margin gamma_0. Training minimizes an l2-regularized surrogate of the
cross-entropy; all bounds below are exact evaluations of closed-form
expressions in (n, C, B, lambda, delta, beta norms, step sizes).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import derive


class SeparableSamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ClassSpec:
    betas: np.ndarray        # (C, p) true per-class parameters
    margin: float            # gamma_0 > 0
    feature_bound: float     # B, cap on ||x||

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=float)
        if b.ndim != 2 or b.shape[0] < 2:
            raise ValueError("betas must be (C, p) with C >= 2")
        if self.margin <= 0 or self.feature_bound <= 0:
            raise ValueError("margin and feature_bound must be positive")
        b.setflags(write=False)
        object.__setattr__(self, "betas", b)

    @property
    def num_classes(self) -> int:
        return self.betas.shape[0]

    @property
    def p(self) -> int:
        return self.betas.shape[1]


@dataclass
class ClassModel:
    beta_hats: np.ndarray    # (C, p)
    reg_lambda: float
    gamma: float

    def norm_cap(self) -> float:
        c = self.beta_hats.shape[0]
        return float(np.sqrt(2.0 * np.log(c) / self.reg_lambda))

    def project(self) -> None:
        """Clip every class vector back into the regularization-implied ball."""
        cap = self.norm_cap()
        norms = np.linalg.norm(self.beta_hats, axis=1)
        over = norms > cap
        if over.any():
            self.beta_hats[over] *= (cap / norms[over])[:, None]


def ramp(t, gamma: float):
    """Piecewise-linear margin loss: 1 below 0, linear to 0 across [0, gamma]."""
    t = np.asarray(t, dtype=float)
    return np.where(t < 0, 1.0, np.where(t <= gamma, 1.0 - t / gamma, 0.0))


def sample_separable(spec: ClassSpec, n: int, seed: int, max_attempts: int = 10**6):
    """Rejection-sample n points satisfying the margin rule, with labels.

    Candidate x comes from a Gaussian scaled into the radius-B ball; a draw
    is kept when exactly one class score is negative and all others clear
    the margin. Returns (X, y) with integer labels in [0, C).
    """
    g = derive(seed, "separable")
    c, p = spec.num_classes, spec.p
    xs, ys = [], []
    attempts = 0
    kept = 0
    while kept < n:
        if attempts >= max_attempts:
            raise SeparableSamplingError(
                f"accepted {kept}/{n} points in {max_attempts} draws; "
                "the margin region is too small for this spec"
            )
        block = min(4096, max_attempts - attempts)
        raw = g.standard_normal((block, p))
        norms = np.linalg.norm(raw, axis=1, keepdims=True)
        radii = spec.feature_bound * g.random((block, 1)) ** (1.0 / p)
        x = raw / np.maximum(norms, 1e-300) * radii
        scores = x @ spec.betas.T
        neg = scores < 0
        ok = (neg.sum(axis=1) == 1) & ((scores > spec.margin) | neg).all(axis=1)
        attempts += block
        if ok.any():
            x_ok = x[ok]
            y_ok = np.argmax(neg[ok], axis=1)
            take = min(n - kept, x_ok.shape[0])
            xs.append(x_ok[:take])
            ys.append(y_ok[:take])
            kept += take
    return np.vstack(xs), np.concatenate(ys)


def cross_entropy_loss(model: ClassModel, x: np.ndarray, y: int) -> float:
    """Regularized cross-entropy of one sample under softmax scores."""
    scores = model.beta_hats @ np.asarray(x, dtype=float)
    logz = _logsumexp(scores)
    reg = 0.5 * model.reg_lambda * float(np.sum(model.beta_hats ** 2))
    return float(logz - scores[int(y)] + reg)


def surrogate_loss(model: ClassModel, spec: ClassSpec, x: np.ndarray) -> float:
    """Label-free upper surrogate of the cross-entropy on separable points."""
    x = np.asarray(x, dtype=float)
    scores_true = spec.betas @ x
    term_dist = float(np.linalg.norm(spec.betas - model.beta_hats, axis=1).sum()
                      * np.linalg.norm(x))
    term_ramp = float(np.sum(-scores_true * ramp(scores_true, model.gamma)))
    term_lse = _logsumexp(model.beta_hats @ x)
    reg = 0.5 * model.reg_lambda * float(np.sum(model.beta_hats ** 2))
    return term_dist + term_ramp + term_lse + reg


def empirical_surrogate(model: ClassModel, spec: ClassSpec, X: np.ndarray) -> float:
    scores_true = X @ spec.betas.T                         # (n, C)
    dist = np.linalg.norm(spec.betas - model.beta_hats, axis=1).sum()
    term_dist = dist * np.linalg.norm(X, axis=1)
    term_ramp = np.sum(-scores_true * ramp(scores_true, model.gamma), axis=1)
    term_lse = _logsumexp_rows(X @ model.beta_hats.T)
    reg = 0.5 * model.reg_lambda * float(np.sum(model.beta_hats ** 2))
    return float(np.mean(term_dist + term_ramp + term_lse) + reg)


def _surrogate_subgradient(model: ClassModel, spec: ClassSpec, X: np.ndarray):
    """One subgradient of the empirical surrogate w.r.t. the model parameters.

    At the distance-term kink (beta_hat_c equal to the true beta_c) the zero
    vector is the chosen element of the subdifferential ball.
    """
    n = X.shape[0]
    diff = model.beta_hats - spec.betas                    # (C, p)
    norms = np.linalg.norm(diff, axis=1)
    unit = np.zeros_like(diff)
    nz = norms > 0
    unit[nz] = diff[nz] / norms[nz][:, None]
    mean_xnorm = float(np.mean(np.linalg.norm(X, axis=1)))
    g_dist = unit * mean_xnorm
    probs = _softmax_rows(X @ model.beta_hats.T)           # (n, C)
    g_lse = probs.T @ X / n
    g_reg = model.reg_lambda * model.beta_hats
    return g_dist + g_lse + g_reg


def subgradient_train(X: np.ndarray, spec: ClassSpec, reg_lambda: float,
                      gamma: float, steps: int, step_rule=None,
                      init: np.ndarray | None = None):
    """Projected subgradient descent on the empirical surrogate.

    step_rule maps the 1-based step index to a positive step size (default
    1/k). Returns (best model, loss trace); the best iterate is the one with
    the lowest empirical surrogate among all visited.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    if step_rule is None:
        step_rule = lambda k: 1.0 / k
    c, p = spec.num_classes, spec.p
    beta = np.zeros((c, p)) if init is None else np.array(init, dtype=float)
    cap = float(np.sqrt(2.0 * np.log(c) / reg_lambda))
    _project_rows(beta, cap)
    n = X.shape[0]
    # beta_hat-independent pieces of the loss, hoisted out of the loop
    xnorm_mean = float(np.mean(np.linalg.norm(X, axis=1)))
    scores_true = X @ spec.betas.T
    ramp_const = float(np.mean(np.sum(-scores_true * ramp(scores_true, gamma),
                                      axis=1)))

    def loss_of(b):
        dist = float(np.linalg.norm(spec.betas - b, axis=1).sum()) * xnorm_mean
        lse = float(np.mean(_logsumexp_rows(X @ b.T)))
        return dist + ramp_const + lse + 0.5 * reg_lambda * float(np.sum(b ** 2))

    best = beta.copy()
    best_loss = loss_of(beta)
    trace = np.empty(steps)
    trace[0] = best_loss
    for k in range(1, steps):
        diff = beta - spec.betas
        norms = np.linalg.norm(diff, axis=1)
        nz = norms > 0
        grad = np.zeros_like(diff)
        grad[nz] = diff[nz] / norms[nz][:, None] * xnorm_mean
        probs = _softmax_rows(X @ beta.T)
        grad += probs.T @ X / n
        grad += reg_lambda * beta
        beta = beta - step_rule(k) * grad
        _project_rows(beta, cap)
        loss = loss_of(beta)
        trace[k] = loss
        if loss < best_loss:
            best_loss = loss
            best = beta.copy()
    return ClassModel(beta_hats=best, reg_lambda=reg_lambda, gamma=gamma), trace


def _project_rows(beta: np.ndarray, cap: float) -> None:
    norms = np.linalg.norm(beta, axis=1)
    over = norms > cap
    if over.any():
        beta[over] *= (cap / norms[over])[:, None]


def subgradient_norm_bound(spec: ClassSpec, reg_lambda: float) -> float:
    """G = 2CB + C sqrt(2 lambda log C), the surrogate subgradient cap."""
    c = spec.num_classes
    return float(2.0 * c * spec.feature_bound
                 + c * np.sqrt(2.0 * reg_lambda * np.log(c)))


def subgradient_gap_bound(spec: ClassSpec, reg_lambda: float, steps: int,
                          step_rule=None) -> float:
    """Bound on best-visited minus optimal empirical surrogate loss."""
    if step_rule is None:
        step_rule = lambda k: 1.0 / k
    etas = np.array([step_rule(k) for k in range(1, steps + 1)])
    g = subgradient_norm_bound(spec, reg_lambda)
    c = spec.num_classes
    return float((8.0 * np.log(c) + g * reg_lambda * np.sum(etas ** 2))
                 / (2.0 * reg_lambda * np.sum(etas)))


@dataclass(frozen=True)
class BoundReport:
    total: float
    parts: tuple             # (sampling, complexity, subgradient)
    constants: dict = field(default_factory=dict)

    def __post_init__(self):
        if any(part < 0 for part in self.parts):
            raise ValueError("bound parts must be nonnegative")


def omega_const(betas: np.ndarray, feature_bound: float, reg_lambda: float) -> float:
    """Per-sample cap on the surrogate loss, omega(beta)."""
    c = betas.shape[0]
    tnorm = float(np.linalg.norm(betas, axis=1).sum())
    return float(2.0 * c * feature_bound * np.sqrt(np.log(c) / reg_lambda)
                 + 2.0 * feature_bound * tnorm + (c + 1) * np.log(c))


def phi_bound(n: int, betas: np.ndarray, feature_bound: float, reg_lambda: float,
              delta: float, steps: int, step_rule=None) -> BoundReport:
    """Single-dataset excess-risk bound: sampling + complexity + subgradient."""
    _check_bound_args(n, feature_bound, reg_lambda, delta)
    c = betas.shape[0]
    b = feature_bound
    omega = omega_const(betas, b, reg_lambda)
    tnorm = float(np.linalg.norm(betas, axis=1).sum())
    a1 = ((2.0 * np.sqrt(6.0 / np.pi) + 4.0 * np.sqrt(2.0))
          * np.sqrt(np.log(c) / reg_lambda) * b * c
          + 2.0 * np.sqrt(3.0 / np.pi) * c * np.log(c))
    a2 = 2.0 * np.sqrt(3.0 / np.pi) * b
    part1 = np.sqrt(2.0 / n * np.log(1.0 / delta)) * omega
    part2 = (a1 + a2 * tnorm) / np.sqrt(n)
    spec = ClassSpec(betas=betas, margin=1.0, feature_bound=b)
    part3 = subgradient_gap_bound(spec, reg_lambda, steps, step_rule)
    return BoundReport(total=float(part1 + part2 + part3),
                       parts=(float(part1), float(part2), float(part3)),
                       constants=dict(omega=omega, a1=float(a1), a2=float(a2),
                                      G=subgradient_norm_bound(spec, reg_lambda)))


def psi_bound(n1: int, n2: int, betas1: np.ndarray, betas2: np.ndarray,
              feature_bound: float, reg_lambda: float, delta: float,
              steps: int, step_rule=None) -> BoundReport:
    """Combined-dataset excess-risk bound; the difference-of-parameters term
    lives in the complexity part."""
    _check_bound_args(min(n1, n2), feature_bound, reg_lambda, delta)
    c = betas1.shape[0]
    b = feature_bound
    om1 = omega_const(betas1, b, reg_lambda)
    om2 = omega_const(betas2, b, reg_lambda)
    t1 = float(np.linalg.norm(betas1, axis=1).sum())
    t2 = float(np.linalg.norm(betas2, axis=1).sum())
    t_minus = float(np.linalg.norm(betas1 - betas2, axis=1).sum())
    t_plus = float(np.linalg.norm(betas1 + betas2, axis=1).sum())
    b1 = 0.5 * np.sqrt(3.0 / np.pi) * b
    b2 = ((4.0 + 2.0 * np.sqrt(3.0 / np.pi)) * b * c * np.sqrt(2.0 * np.log(c) / reg_lambda)
          + 2.0 * np.sqrt(3.0 / np.pi) * c * np.log(c))
    b3 = np.sqrt(3.0 / np.pi) * b
    part1 = np.sqrt(2.0 * (om1 ** 2 / n1 + om2 ** 2 / n2) * np.log(1.0 / delta))
    inv_roots = 1.0 / np.sqrt(n1) + 1.0 / np.sqrt(n2)
    part2 = (inv_roots * (b1 * (t_minus + t_plus) + b2)
             + b3 * (t1 / np.sqrt(n1) + t2 / np.sqrt(n2)))
    spec = ClassSpec(betas=betas1, margin=1.0, feature_bound=b)
    g = subgradient_norm_bound(spec, reg_lambda)
    if step_rule is None:
        step_rule = lambda k: 1.0 / k
    etas = np.array([step_rule(k) for k in range(1, steps + 1)])
    part3 = ((8.0 * np.log(c) + 2.0 * g * reg_lambda * np.sum(etas ** 2))
             / (reg_lambda * np.sum(etas)))
    return BoundReport(total=float(part1 + part2 + part3),
                       parts=(float(part1), float(part2), float(part3)),
                       constants=dict(omega1=om1, omega2=om2, b1=float(b1),
                                      b2=float(b2), b3=float(b3), G=float(g)))


def decide_merge_classification(n1: int, n2: int, betas1: np.ndarray,
                                betas2: np.ndarray, feature_bound: float,
                                reg_lambda: float, delta: float, steps: int,
                                step_rule=None):
    """Bound-comparison merge rule; returns (merge, lhs, rhs).

    Merging is advised when the combined-training bound's distinctive terms
    (left side) do not exceed the separate-training counterparts plus the
    subgradient slack (right side). Evaluated exactly as displayed; the
    shared bound pieces have already been cancelled from both sides.
    """
    _check_bound_args(min(n1, n2), feature_bound, reg_lambda, delta)
    c = betas1.shape[0]
    b = feature_bound
    om1 = omega_const(betas1, b, reg_lambda)
    om2 = omega_const(betas2, b, reg_lambda)
    t1 = float(np.linalg.norm(betas1, axis=1).sum())
    t2 = float(np.linalg.norm(betas2, axis=1).sum())
    t_minus = float(np.linalg.norm(betas1 - betas2, axis=1).sum())
    t_plus = float(np.linalg.norm(betas1 + betas2, axis=1).sum())
    log_term = np.log(1.0 / delta)
    root3pi = np.sqrt(3.0 / np.pi)
    lhs = (np.sqrt(2.0 * log_term * (om1 ** 2 / n1 + om2 ** 2 / n2))
           + root3pi * b * (1.0 / np.sqrt(n1) + 1.0 / np.sqrt(n2))
           * 0.5 * (t_minus + t_plus))
    if step_rule is None:
        step_rule = lambda k: 1.0 / k
    eta_sum = float(np.sum([step_rule(k) for k in range(1, steps + 1)]))
    rhs = (np.sqrt(2.0 * log_term) * (om1 / np.sqrt(n1) + om2 / np.sqrt(n2))
           + root3pi * b * (t1 / np.sqrt(n1) + t2 / np.sqrt(n2))
           + 4.0 * np.log(c) / (reg_lambda * eta_sum))
    return bool(lhs <= rhs), float(lhs), float(rhs)


def _check_bound_args(n, feature_bound, reg_lambda, delta):
    if n < 1:
        raise ValueError("sample sizes must be positive")
    if feature_bound <= 0 or reg_lambda <= 0:
        raise ValueError("feature_bound and reg_lambda must be positive")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")


def _logsumexp(v: np.ndarray) -> float:
    m = float(np.max(v))
    return m + float(np.log(np.sum(np.exp(v - m))))


def _logsumexp_rows(m: np.ndarray) -> np.ndarray:
    mx = m.max(axis=1, keepdims=True)
    return (mx + np.log(np.exp(m - mx).sum(axis=1, keepdims=True))).ravel()


def _softmax_rows(m: np.ndarray) -> np.ndarray:
    mx = m.max(axis=1, keepdims=True)
    e = np.exp(m - mx)
    return e / e.sum(axis=1, keepdims=True)
