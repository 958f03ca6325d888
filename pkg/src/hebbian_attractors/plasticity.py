"""ABCD Hebbian updates, update scheduling and weight stabilization."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, NumericDivergenceError, PersistenceError
from .network import NetworkShape, PlasticNetwork

MAXNORM_GUARD = 1e-12
RULE_FORMAT = "hebbian-rule"
RULE_VERSION = 1


@dataclass(frozen=True)
class Stabilization:
    """How weight growth is contained after each Hebbian update.

    ``kind`` is one of ``"maxnorm"``, ``"clip"``, ``"oja"`` or ``"none"``.
    ``epsilon`` is the clip threshold; ``oja_averaged`` selects whether the
    Oja decay uses the moving-averaged or the instantaneous post activation.
    """

    kind: str = "maxnorm"
    epsilon: float | None = None
    oja_averaged: bool = True

    def __post_init__(self):
        if self.kind not in ("maxnorm", "clip", "oja", "none"):
            raise ConfigurationError(f"unknown stabilization mode {self.kind!r}")
        if self.kind == "clip" and not (self.epsilon is not None and self.epsilon > 0):
            raise ConfigurationError("clip mode needs a positive epsilon")

    @classmethod
    def parse(cls, text: str) -> "Stabilization":
        """Accept ``maxnorm``, ``none``, ``oja`` or ``clip:<eps>``."""
        text = text.strip().lower()
        if text.startswith("clip"):
            _, _, eps = text.partition(":")
            return clip(float(eps) if eps else 5.0)
        return cls(text)

    def __str__(self):
        return f"clip:{self.epsilon:g}" if self.kind == "clip" else self.kind


MAX_NORM = Stabilization("maxnorm")
NO_STABILIZATION = Stabilization("none")
OJA = Stabilization("oja")


def clip(epsilon: float = 5.0) -> Stabilization:
    return Stabilization("clip", float(epsilon))


@dataclass(frozen=True)
class UpdateSchedule:
    """Controller rate and Hebbian rate, both in Hz."""

    f_nn: float = 20.0
    f_hebb: float = 20.0

    def __post_init__(self):
        if not (self.f_nn >= self.f_hebb >= 1):
            raise ConfigurationError(
                f"need f_nn >= f_hebb >= 1 Hz, got f_nn={self.f_nn}, f_hebb={self.f_hebb}"
            )

    @classmethod
    def from_ratio(cls, ratio: int, f_nn: float = 20.0) -> "UpdateSchedule":
        return cls(f_nn=f_nn, f_hebb=f_nn / ratio)

    @property
    def period(self) -> int:
        """Number of control steps between Hebbian updates."""
        return max(1, math.floor(self.f_nn / self.f_hebb + 1e-9))

    def is_tick(self, t: int) -> bool:
        return t > 0 and t % self.period == 0


@dataclass
class LayerCoefficients:
    """Per-connection ABCD coefficients and learning rates of one weight matrix."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        for name in "ABCD":
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        self.eta = np.broadcast_to(np.asarray(self.eta, dtype=float), self.A.shape).copy()
        shapes = {getattr(self, n).shape for n in ("A", "B", "C", "D", "eta")}
        if len(shapes) != 1:
            raise ConfigurationError(f"coefficient matrices disagree in shape: {shapes}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.A.shape

    def copy(self) -> "LayerCoefficients":
        return LayerCoefficients(self.A.copy(), self.B.copy(), self.C.copy(), self.D.copy(), self.eta.copy())


@dataclass
class PlasticityRule:
    """Everything that determines how a network rewires itself during a rollout.

    ``eta_mode`` is ``"evolved"`` or a float; with a float every learning
    rate equals that constant and η is not part of the genome.
    """

    layers: list[LayerCoefficients]
    stabilization: Stabilization | str = MAX_NORM
    window: int = 1
    schedule: UpdateSchedule = field(default_factory=UpdateSchedule)
    eta_mode: str | float = "evolved"

    def __post_init__(self):
        if isinstance(self.stabilization, str):
            self.stabilization = Stabilization.parse(self.stabilization)
        if self.window < 1:
            raise ConfigurationError(f"window must be >= 1, got {self.window}")
        if self.eta_mode != "evolved":
            value = float(self.eta_mode)
            for layer in self.layers:
                layer.eta = np.full(layer.A.shape, value)

    def copy(self) -> "PlasticityRule":
        return replace(self, layers=[layer.copy() for layer in self.layers])

    def with_coefficients(self, layers: Sequence[LayerCoefficients]) -> "PlasticityRule":
        return replace(self, layers=[layer.copy() for layer in layers])


def random_coefficients(
    shape: NetworkShape,
    rng: np.random.Generator,
    low: float = -1.0,
    high: float = 1.0,
) -> list[LayerCoefficients]:
    out = []
    for r, c in shape.weight_shapes:
        a, b, cc, d, eta = rng.uniform(low, high, size=(5, r, c))
        out.append(LayerCoefficients(a, b, cc, d, eta))
    return out


def hebbian_delta_scalar(pre: float, post: float, theta: Sequence[float], eta: float) -> float:
    """η·(a·pre·post + b·pre + c·post + d) for a single connection."""
    a, b, c, d = theta
    return eta * (a * pre * post + b * pre + c * post + d)


def hebbian_delta_matrix(
    pre_avg: np.ndarray,
    post_avg: np.ndarray,
    coeffs: LayerCoefficients,
    eta: np.ndarray | None = None,
) -> np.ndarray:
    """Vectorized ABCD update for a whole layer.

    ``pre_avg`` has trailing size n_{k-1}, ``post_avg`` trailing size n_k;
    the result has trailing shape (n_k, n_{k-1}) and broadcasts over any
    leading batch axes.
    """
    pre = np.asarray(pre_avg, dtype=float)
    post = np.asarray(post_avg, dtype=float)
    n_out, n_in = coeffs.shape[-2:]
    if pre.shape[-1] != n_in or post.shape[-1] != n_out:
        raise ConfigurationError(
            f"activations ({post.shape[-1]}, {pre.shape[-1]}) do not match layer shape ({n_out}, {n_in})"
        )
    eta = coeffs.eta if eta is None else eta
    pre_b = pre[..., None, :]
    post_b = post[..., :, None]
    return eta * (coeffs.A * (post_b * pre_b) + coeffs.B * pre_b + coeffs.C * post_b + coeffs.D)


def effective_delta(
    W: np.ndarray,
    dW: np.ndarray,
    mode: Stabilization,
    post_avg: np.ndarray | None = None,
    eta: np.ndarray | None = None,
) -> np.ndarray:
    """The increment actually added to ``W`` (before any max normalization)."""
    if mode.kind == "clip":
        return np.clip(dW, -mode.epsilon, mode.epsilon)
    if mode.kind == "oja":
        if post_avg is None or eta is None:
            raise ConfigurationError("Oja decay needs the post activation and learning rates")
        post_sq = np.asarray(post_avg, dtype=float)[..., :, None] ** 2
        return dW - eta * post_sq * W
    return dW


def max_normalize(W: np.ndarray) -> np.ndarray:
    """Divide each layer (last two axes) by its largest absolute entry."""
    m = np.abs(W).max(axis=(-2, -1), keepdims=True)
    return W / np.where(m < MAXNORM_GUARD, 1.0, m)


def apply_stabilization(
    W: np.ndarray,
    dW: np.ndarray,
    mode: Stabilization,
    post_avg: np.ndarray | None = None,
    eta: np.ndarray | None = None,
    strict: bool = True,
) -> np.ndarray:
    """Return the stabilized new weights ``W ⊕ dW`` for one layer.

    With ``strict`` a non-finite result raises NumericDivergenceError;
    batched callers pass ``strict=False`` and inspect rows themselves.
    """
    W = np.asarray(W, dtype=float)
    dW = np.asarray(dW, dtype=float)
    if W.shape[-2:] != dW.shape[-2:]:
        raise ConfigurationError(f"weight shape {W.shape} and update shape {dW.shape} differ")
    with np.errstate(over="ignore", invalid="ignore"):
        new = W + effective_delta(W, dW, mode, post_avg, eta)
        if mode.kind == "maxnorm":
            new = max_normalize(new)
    if strict and not np.all(np.isfinite(new)):
        raise NumericDivergenceError("plastic weights became non-finite")
    return new


def scheduled_step(
    net: PlasticNetwork,
    rule: PlasticityRule,
    t: int,
    record: list | None = None,
) -> bool:
    """Apply one Hebbian update if ``t`` is a schedule tick.

    Must be called after ``net.forward`` for step ``t`` so the traces already
    hold the current activations.  If ``record`` is a list, the effective
    per-layer increments are appended to it.  Rows of a batched network whose
    weights turn non-finite are flagged in ``net.diverged`` and zeroed; an
    unbatched network raises instead.
    """
    if t < 0:
        raise ConfigurationError(f"step index must be >= 0, got {t}")
    if not rule.schedule.is_tick(t):
        return False
    if rule.window != net.window:
        raise ConfigurationError(f"rule window {rule.window} != network trace window {net.window}")
    avgs = [net.averaged_activations(k) for k in range(len(net.traces))]
    oja_post = None
    if rule.stabilization.kind == "oja" and not rule.stabilization.oja_averaged:
        oja_post = [tr.last() for tr in net.traces]
    new_weights, deltas = [], []
    bad = np.zeros(net.batch_shape, dtype=bool)
    for k, (W, coeffs) in enumerate(zip(net.weights, rule.layers)):
        post = avgs[k + 1] if oja_post is None else oja_post[k + 1]
        # overflow is detected below and handled per row
        with np.errstate(over="ignore", invalid="ignore"):
            dW = hebbian_delta_matrix(avgs[k], avgs[k + 1], coeffs)
            if record is not None:
                deltas.append(effective_delta(W, dW, rule.stabilization, post, coeffs.eta))
            new = apply_stabilization(W, dW, rule.stabilization, post, coeffs.eta, strict=False)
        bad |= ~np.isfinite(new).all(axis=(-2, -1))
        new_weights.append(new)
    if bad.any():
        if net.batch_shape == ():
            raise NumericDivergenceError(f"plastic weights became non-finite at step {t}")
        new_weights = [np.where(bad[..., None, None], 0.0, w) for w in new_weights]
        net.diverged |= bad
    net.weights = new_weights
    if record is not None:
        record.append(deltas)
    return True


_PRESETS = {
    "A": (NO_STABILIZATION, 1, 1),
    "B": (MAX_NORM, 1, 1),
    "C": (MAX_NORM, 1, 4),
    "D": (MAX_NORM, 10, 1),
    "E": (MAX_NORM, 10, 4),
}


def condition_preset(name: str) -> tuple[Stabilization, int, int]:
    """(stabilization, window M, f_NN/f_hebb ratio) of an ablation condition A-E."""
    try:
        return _PRESETS[name.strip().upper()]
    except KeyError:
        raise ConfigurationError(f"unknown condition {name!r}; expected one of A-E") from None


def rule_to_dict(rule: PlasticityRule) -> dict:
    if rule.layers and rule.layers[0].A.ndim != 2:
        raise ConfigurationError("only unbatched rules can be serialized")
    return {
        "format": RULE_FORMAT,
        "version": RULE_VERSION,
        "stabilization": str(rule.stabilization),
        "oja_averaged": rule.stabilization.oja_averaged,
        "window": rule.window,
        "f_nn": rule.schedule.f_nn,
        "f_hebb": rule.schedule.f_hebb,
        "eta_mode": rule.eta_mode,
        "layers": {
            str(k): {name: getattr(layer, name).tolist() for name in ("A", "B", "C", "D", "eta")}
            for k, layer in enumerate(rule.layers)
        },
    }


def rule_from_dict(doc: dict) -> PlasticityRule:
    if doc.get("format") != RULE_FORMAT:
        raise PersistenceError(f"not a Hebbian rule document (format={doc.get('format')!r})")
    if doc.get("version") != RULE_VERSION:
        raise PersistenceError(f"unsupported rule version {doc.get('version')!r}")
    try:
        layers = [
            LayerCoefficients(**{name: np.array(doc["layers"][str(k)][name]) for name in ("A", "B", "C", "D", "eta")})
            for k in range(len(doc["layers"]))
        ]
        stab = Stabilization.parse(doc["stabilization"])
        stab = replace(stab, oja_averaged=bool(doc.get("oja_averaged", True)))
        return PlasticityRule(
            layers=layers,
            stabilization=stab,
            window=int(doc["window"]),
            schedule=UpdateSchedule(doc["f_nn"], doc["f_hebb"]),
            eta_mode=doc["eta_mode"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise PersistenceError(f"malformed rule document: {exc}") from exc


def save_rule(rule: PlasticityRule, path: str | Path) -> None:
    Path(path).write_text(json.dumps(rule_to_dict(rule), indent=1))


def load_rule(path: str | Path) -> PlasticityRule:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise PersistenceError(f"cannot read rule file {path}: {exc}") from exc
    return rule_from_dict(doc)
