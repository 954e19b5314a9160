"""Catalog of noise coefficients sigma(u).

Four families are supported:

``constant``
    sigma(u) = eps0.
``bounded``
    sigma(u) = eps0 + b |u| / (1 + |u|); takes values in [eps0, eps0 + b).
``logdecay``
    sigma(u) = eps0 * log(e + |u|)^(-q) with q = (1/6 - gamma) / 2. Positive
    everywhere, and sigma(u) * log|u|^(1/6 - gamma) -> infinity.
``linear``
    sigma(u) = c u (parabolic Anderson model).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["SigmaSpec", "KINDS", "evaluate", "lipschitz_constant"]

KINDS = ("constant", "bounded", "logdecay", "linear")

# integer codes used by the compiled kernels
KIND_CODES = {name: i for i, name in enumerate(KINDS)}

_ALIASES = {
    "boundedbelow": "bounded",
    "bounded_below": "bounded",
    "log_decay": "logdecay",
    "pam": "linear",
}


@dataclass(frozen=True)
class SigmaSpec:
    kind: str
    eps0: float = 0.0
    c: float = 0.0
    gamma: float = 0.1
    b: float = 0.0

    def __post_init__(self):
        kind = str(self.kind).lower()
        kind = _ALIASES.get(kind, kind)
        if kind not in KINDS:
            raise ValueError(f"unknown sigma kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "kind", kind)
        if kind == "constant" and self.eps0 < 0:
            raise ValueError("constant sigma needs eps0 >= 0")
        if kind in ("bounded", "logdecay") and not self.eps0 > 0:
            raise ValueError(f"{kind} sigma needs eps0 > 0")
        if kind == "bounded" and self.b < 0:
            raise ValueError("bounded sigma needs b >= 0")
        if kind == "logdecay" and not 0 < self.gamma < 1 / 6:
            raise ValueError("logdecay sigma needs gamma in (0, 1/6)")
        if kind == "linear" and not self.c > 0:
            raise ValueError("linear sigma needs c > 0")

    @classmethod
    def constant(cls, eps0):
        return cls("constant", eps0=eps0)

    @classmethod
    def bounded(cls, eps0, b):
        return cls("bounded", eps0=eps0, b=b)

    @classmethod
    def logdecay(cls, eps0, gamma):
        return cls("logdecay", eps0=eps0, gamma=gamma)

    @classmethod
    def linear(cls, c):
        return cls("linear", c=c)

    @property
    def code(self) -> int:
        return KIND_CODES[self.kind]

    @property
    def decay_power(self) -> float:
        """Exponent q in the logdecay family."""
        return 0.5 * (1.0 / 6.0 - self.gamma)

    @property
    def lip(self) -> float:
        return lipschitz_constant(self)

    def kernel_args(self):
        """(code, p0, p1) consumed by the compiled stepping kernel."""
        if self.kind == "constant":
            return self.code, float(self.eps0), 0.0
        if self.kind == "bounded":
            return self.code, float(self.eps0), float(self.b)
        if self.kind == "logdecay":
            return self.code, float(self.eps0), self.decay_power
        return self.code, float(self.c), 0.0

    def as_dict(self):
        return {"kind": self.kind, "eps0": self.eps0, "c": self.c, "gamma": self.gamma, "b": self.b}


def evaluate(spec: SigmaSpec, u):
    """sigma(u) for scalar or array ``u``."""
    x = np.asarray(u, dtype=float)
    if spec.kind == "constant":
        out = np.full_like(x, spec.eps0)
    elif spec.kind == "bounded":
        ax = np.abs(x)
        out = spec.eps0 + spec.b * ax / (1.0 + ax)
    elif spec.kind == "logdecay":
        out = spec.eps0 * np.log(math.e + np.abs(x)) ** (-spec.decay_power)
    else:
        out = spec.c * x
    return float(out) if out.ndim == 0 else out


def lipschitz_constant(spec: SigmaSpec) -> float:
    """Optimal Lipschitz constant, from the sup of |sigma'|.

    Exact for every family: |sigma'| is maximal at u = 0 for the bounded
    and logdecay families.
    """
    if spec.kind == "constant":
        return 0.0
    if spec.kind == "bounded":
        return float(spec.b)
    if spec.kind == "logdecay":
        # |d/du eps0 log(e+u)^-q| = eps0 q log(e+u)^(-q-1) / (e+u), max at u=0
        return spec.eps0 * spec.decay_power / math.e
    return float(spec.c)
