"""Single-hidden-layer networks and sup-norm fitting on compact balls.

These nets do double duty: one approximates the truncated target functional
on a product of balls, and a chain of them approximates the identity map so
that past inputs can be ferried through the reservoir one step at a time.

Training is random features plus ridge least squares, never backprop: the
hidden layer is frozen random, the readout solves a convex problem, and the
whole fit is bitwise reproducible from its arguments.
"""

from dataclasses import dataclass, field

import numpy as np

from .linalg import operator_norm
from .windows import sample_ball


@dataclass(frozen=True)
class Activation:
    """A scalar activation, applied componentwise.

    Must be Lipschitz, bounded, and non-constant; those three facts are what
    every estimate downstream leans on.
    """

    kind: str
    lipschitz_const: float
    sup_bound: float

    def __call__(self, x):
        if self.kind == "tanh":
            return np.tanh(x)
        if self.kind == "logistic":
            return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))
        raise ValueError(f"unknown activation kind {self.kind!r}")


_ACTIVATIONS = {
    "tanh": Activation(kind="tanh", lipschitz_const=1.0, sup_bound=1.0),
    "logistic": Activation(kind="logistic", lipschitz_const=0.25, sup_bound=1.0),
}


def get_activation(kind: str) -> Activation:
    try:
        return _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation kind {kind!r}; known: {sorted(_ACTIVATIONS)}") from None


def _freeze(arr) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, order="C")
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class ShallowNet:
    """readout @ sigma(hidden_matrix @ u + hidden_bias)."""

    hidden_matrix: np.ndarray
    hidden_bias: np.ndarray
    readout: np.ndarray
    activation: Activation

    def __post_init__(self):
        object.__setattr__(self, "hidden_matrix", _freeze(self.hidden_matrix))
        object.__setattr__(self, "hidden_bias", _freeze(self.hidden_bias))
        object.__setattr__(self, "readout", _freeze(self.readout))
        w, d = self.hidden_matrix.shape
        if self.hidden_bias.shape != (w,):
            raise ValueError(f"hidden_bias shape {self.hidden_bias.shape} != ({w},)")
        if self.readout.ndim != 2 or self.readout.shape[1] != w:
            raise ValueError(f"readout shape {self.readout.shape} incompatible with width {w}")

    @property
    def in_dim(self) -> int:
        return self.hidden_matrix.shape[1]

    @property
    def out_dim(self) -> int:
        return self.readout.shape[0]

    @property
    def width(self) -> int:
        return self.hidden_matrix.shape[0]

    def forward(self, u) -> np.ndarray:
        """Evaluate the net at a single vector (d,) or a batch (n, d)."""
        u = np.asarray(u, dtype=np.float64)
        if u.ndim == 1:
            if u.shape[0] != self.in_dim:
                raise ValueError(f"input dim {u.shape[0]} != {self.in_dim}")
            return self.readout @ self.activation(self.hidden_matrix @ u + self.hidden_bias)
        if u.ndim == 2:
            if u.shape[1] != self.in_dim:
                raise ValueError(f"input dim {u.shape[1]} != {self.in_dim}")
            return self.activation(u @ self.hidden_matrix.T + self.hidden_bias) @ self.readout.T
        raise ValueError(f"expected a vector or a batch of vectors, got ndim={u.ndim}")

    def to_json(self) -> dict:
        return {
            "in_dim": self.in_dim,
            "out_dim": self.out_dim,
            "width": self.width,
            "activation": self.activation.kind,
            "hidden_matrix": self.hidden_matrix.tolist(),
            "hidden_bias": self.hidden_bias.tolist(),
            "readout": self.readout.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ShallowNet":
        return cls(
            hidden_matrix=np.asarray(obj["hidden_matrix"], dtype=np.float64),
            hidden_bias=np.asarray(obj["hidden_bias"], dtype=np.float64),
            readout=np.asarray(obj["readout"], dtype=np.float64),
            activation=get_activation(obj["activation"]),
        )


def lipschitz_bound(net: ShallowNet) -> float:
    """||readout|| * L_sigma * ||hidden_matrix|| in operator norms.

    An upper bound on ||net(x) - net(y)|| / ||x - y||, exact enough for all
    the error gains used in the construction.
    """
    r = operator_norm(net.readout)
    if r == 0.0:
        return 0.0
    return r * net.activation.lipschitz_const * operator_norm(net.hidden_matrix)


class FitToleranceError(RuntimeError):
    """Raised when the doubling policy exhausts max_width above tolerance."""

    def __init__(self, message: str, achieved: float, width: int):
        super().__init__(message)
        self.achieved = achieved
        self.width = width


@dataclass(frozen=True)
class WidthPolicy:
    """Doubling schedule and sampling budget for fit_to_tolerance."""

    start_width: int = 32
    max_width: int = 4096
    train_samples: int = 1024
    val_samples: int = 2048
    ridge: float = 1e-10
    scale: float | None = None  # None: 2 / fitting radius

    def widths(self):
        w = self.start_width
        while w <= self.max_width:
            yield w
            w *= 2


def fit_random_feature(
    inputs, targets, width: int, ridge: float, scale: float, seed: int,
    activation: str = "tanh",
) -> ShallowNet:
    """Frozen random hidden layer + ridge least-squares readout.

    ``width`` random units are drawn i.i.d. uniform on [-scale, scale] (rows
    and biases alike); one extra unit with a zero input row and bias 1 is
    appended so that constant targets are exactly representable.  The readout
    minimizes mean squared error plus ridge * ||readout||_F^2, which makes the
    solution invariant under uniform duplication of the sample set.  The
    constant unit is exempt from the penalty, as an intercept should be.
    """
    X = np.asarray(inputs, dtype=np.float64)
    Y = np.asarray(targets, dtype=np.float64)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise ValueError(f"inconsistent sample shapes {X.shape} vs {Y.shape}")
    if X.shape[0] == 0:
        raise ValueError("need at least one sample")
    if width < 1:
        raise ValueError(f"width must be >= 1, got {width}")
    if ridge < 0:
        raise ValueError(f"ridge must be >= 0, got {ridge}")
    n, d = X.shape

    rng = np.random.default_rng(seed)
    hidden = np.zeros((width + 1, d))
    bias = np.zeros(width + 1)
    hidden[:width] = rng.uniform(-scale, scale, size=(width, d))
    bias[:width] = rng.uniform(-scale, scale, size=width)
    bias[width] = 1.0

    act = get_activation(activation)
    phi = act(X @ hidden.T + bias)  # (n, width+1)
    gram = phi.T @ phi / n
    gram[np.diag_indices(width)] += ridge  # leave the constant unit unpenalized
    rhs = phi.T @ Y / n
    try:
        readout_t = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            "normal equations are singular; increase ridge or width"
        ) from exc
    return ShallowNet(hidden_matrix=hidden, hidden_bias=bias, readout=readout_t.T, activation=act)


def _sup_error(net: ShallowNet, target, points: np.ndarray) -> float:
    pred = net.forward(points)
    want = np.asarray(target(points), dtype=np.float64)
    return float(np.max(np.linalg.norm(pred - want, axis=1)))


def fit_to_tolerance(
    target,
    domain_dim: int,
    radius: float,
    tol: float,
    policy: WidthPolicy,
    seed: int,
    *,
    margin: float = 0.8,
    sampler=None,
) -> tuple[ShallowNet, float]:
    """Fit ``target`` on the radius-ball to a sampled sup error <= tol * margin.

    ``target`` maps a batch (n, domain_dim) to (n, out_dim).  Widths double
    from policy.start_width until the error on a held-out validation sample
    clears tol * margin; the margin leaves headroom because a sampled sup is
    only a lower bound on the true one.  ``sampler(n, seed) -> (n, domain_dim)``
    overrides the default uniform-ball sampling (the product-of-balls domain
    of the stacked-lag fit needs this).

    Raises FitToleranceError, carrying the best achieved error, if max_width
    is not enough.
    """
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    if not 0 < margin <= 1:
        raise ValueError(f"margin must lie in (0, 1], got {margin}")
    if sampler is None:
        sampler = lambda n, s: sample_ball(domain_dim, radius, n, s)
    ss = np.random.SeedSequence(seed)
    train_seed, val_seed, base_weight_seed = (int(s) for s in ss.generate_state(3))
    X_train = sampler(policy.train_samples, train_seed)
    Y_train = np.asarray(target(X_train), dtype=np.float64)
    X_val = sampler(policy.val_samples, val_seed)

    scale = policy.scale if policy.scale is not None else 2.0 / radius
    best_err = np.inf
    best_net = None
    for attempt, width in enumerate(policy.widths()):
        net = fit_random_feature(
            X_train, Y_train, width=width, ridge=policy.ridge, scale=scale,
            seed=base_weight_seed + attempt,
        )
        err = _sup_error(net, target, X_val)
        if err < best_err:
            best_err, best_net = err, net
        if err <= tol * margin:
            return net, err
    raise FitToleranceError(
        f"tolerance {tol:g} (margin {margin:g}) not met: best sampled error "
        f"{best_err:g} at width {best_net.width if best_net else 0}",
        achieved=best_err,
        width=best_net.width if best_net else 0,
    )


def fit_identity(d: int, radius: float, tol: float, policy: WidthPolicy, seed: int, *, margin: float = 0.8) -> ShallowNet:
    """Fit the identity map on the radius-ball in d-space; returns the net."""
    net, _ = fit_to_tolerance(
        lambda x: x, domain_dim=d, radius=radius, tol=tol, policy=policy, seed=seed, margin=margin
    )
    return net
