"""Score/probability mapping and the margin and probability-aware losses.

All functions accept scalars or numpy arrays and broadcast elementwise.
The probability-aware pair loss is::

    w * (alpha_r * |phi_inv(p) - s| + beta_r * [phi_inv(eps_n) - s_neg]_+)
    w = exp(min(K * [s + gamma - s_neg]_+, cap))
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .errors import ConfigError

PAPER_ALPHA = (1.0, 1.0, 1.0, 1.0, 1.0, 10.0)
PAPER_BETA = (15.0, 10.0, 10.0, 15.0, 10.0, 0.0)


@dataclass(frozen=True)
class Hyperparams:
    lam: float = 10.0
    K: float = 1000.0
    gamma: float = 1.0
    eps_p: float = 1e-4
    eps_n: float = 1e-13
    alpha: tuple = PAPER_ALPHA
    beta: tuple = PAPER_BETA
    # None disables the cap (overflow then surfaces as inf/nan)
    weight_exponent_cap: Optional[float] = 60.0
    add_margin: bool = False
    _alpha_arr: np.ndarray = field(init=False, repr=False, compare=False)
    _beta_arr: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        if not self.lam > 0:
            raise ConfigError("loss.lambda must be > 0")
        if not 0 < self.eps_n < self.eps_p < 1:
            raise ConfigError("loss.eps_n/eps_p must satisfy 0 < eps_n < eps_p < 1")
        if len(self.alpha) != len(self.beta):
            raise ConfigError("loss.alpha and loss.beta must have one entry per relation")
        if min(self.alpha + self.beta) < 0:
            raise ConfigError("loss.alpha and loss.beta must be nonnegative")
        if self.K < 0 or self.gamma < 0:
            raise ConfigError("loss.K and loss.gamma must be nonnegative")
        if self.weight_exponent_cap is not None and self.weight_exponent_cap <= 0:
            raise ConfigError("loss.weight_exponent_cap must be positive")
        object.__setattr__(self, "_alpha_arr", np.asarray(self.alpha))
        object.__setattr__(self, "_beta_arr", np.asarray(self.beta))

    def alpha_of(self, r):
        return self._alpha_arr[r]

    def beta_of(self, r):
        return self._beta_arr[r]

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.init}
        d["lambda"] = d.pop("lam")
        d["alpha"], d["beta"] = list(self.alpha), list(self.beta)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        known = {f.name for f in fields(cls) if f.init}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown loss keys: {sorted(unknown)}")
        return cls(**d)


def _pos(x):
    return np.maximum(x, 0.0)


def phi(f, lam):
    """Score -> probability, ``exp(-lam * f)``."""
    f = np.asarray(f, dtype=float)
    if np.any(f < 0):
        raise ValueError("score must be nonnegative")
    out = np.exp(-lam * f)
    return out if out.ndim else float(out)


def phi_inv(p, lam):
    """Probability -> score, ``ln(1/p) / lam``."""
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0) | (p > 1)) or np.any(np.isnan(p)):
        raise ValueError("probability must lie in (0, 1]")
    out = -np.log(p) / lam
    return out if out.ndim else float(out)


def clamp_probability(p_raw, hyper: Hyperparams, is_negative=False):
    p_raw = np.asarray(p_raw, dtype=float)
    out = np.where(is_negative, hyper.eps_n, np.maximum(p_raw, hyper.eps_p))
    return out if out.ndim else float(out)


def margin_pair_loss(s, s_neg, gamma):
    out = _pos(np.asarray(s, dtype=float) + gamma - s_neg)
    return out if out.ndim else float(out)


def positive_prob_loss(p, f, hyper: Hyperparams):
    out = np.abs(phi_inv(p, hyper.lam) - np.asarray(f, dtype=float))
    return out if out.ndim else float(out)


def negative_prob_loss(f_neg, hyper: Hyperparams):
    out = _pos(np.log(1.0 / hyper.eps_n) / hyper.lam - np.asarray(f_neg, dtype=float))
    return out if out.ndim else float(out)


def margin_weight(s, s_neg, hyper: Hyperparams):
    """exp(K * hinge), with the exponent clipped at ``weight_exponent_cap``."""
    expo = hyper.K * margin_pair_loss(s, s_neg, hyper.gamma)
    if hyper.weight_exponent_cap is not None:
        expo = np.minimum(expo, hyper.weight_exponent_cap)
    with np.errstate(over="ignore"):
        return np.exp(expo)


def combined_pair_loss(s, s_neg, p, r, hyper: Hyperparams):
    with np.errstate(over="ignore", invalid="ignore"):
        w = margin_weight(s, s_neg, hyper)
        inner = hyper.alpha_of(r) * positive_prob_loss(p, s, hyper) + hyper.beta_of(r) * negative_prob_loss(
            s_neg, hyper
        )
        out = w * inner
        if hyper.add_margin:
            out = out + margin_pair_loss(s, s_neg, hyper.gamma)
    out = np.asarray(out)
    return out if out.ndim else float(out)


def grad_combined(s, s_neg, p, r, hyper: Hyperparams, detach_weight=True):
    """Derivatives of :func:`combined_pair_loss` w.r.t. ``s`` and ``s_neg``.

    With ``detach_weight`` the exponential weight is a constant coefficient;
    otherwise its derivative ``K * w`` (zero once saturated) enters through
    the product rule. Subgradients at kinks are 0.
    """
    s = np.asarray(s, dtype=float)
    s_neg = np.asarray(s_neg, dtype=float)
    alpha, beta = hyper.alpha_of(r), hyper.beta_of(r)
    target = phi_inv(p, hyper.lam)
    neg_target = np.log(1.0 / hyper.eps_n) / hyper.lam
    w = margin_weight(s, s_neg, hyper)
    d_pos = w * alpha * np.sign(s - target)
    d_neg = -w * beta * (neg_target - s_neg > 0)
    hinge = s + hyper.gamma - s_neg
    if not detach_weight:
        inner = alpha * np.abs(target - s) + beta * _pos(neg_target - s_neg)
        live = hinge > 0
        if hyper.weight_exponent_cap is not None:
            live &= hyper.K * hinge < hyper.weight_exponent_cap
        dw = np.where(live, hyper.K * w, 0.0) * inner
        d_pos = d_pos + dw
        d_neg = d_neg - dw
    if hyper.add_margin:
        active = (hinge > 0).astype(float)
        d_pos = d_pos + active
        d_neg = d_neg - active
    if d_pos.ndim == 0:
        return float(d_pos), float(d_neg)
    return d_pos, d_neg


def margin_grad(s, s_neg, gamma):
    active = (np.asarray(s, dtype=float) + gamma - s_neg > 0).astype(float)
    return active, -active


__all__ = [
    "Hyperparams",
    "phi",
    "phi_inv",
    "clamp_probability",
    "margin_pair_loss",
    "positive_prob_loss",
    "negative_prob_loss",
    "margin_weight",
    "combined_pair_loss",
    "grad_combined",
    "margin_grad",
]
