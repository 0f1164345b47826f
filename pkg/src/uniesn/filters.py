"""Target filters: causal, time-invariant, fading-memory, with certified tails.

Each filter here is an analytic family whose finite-memory truncation error
has a closed-form upper bound.  That bound is what lets the construction
spend exactly a third of its error budget on truncation and prove it, rather
than invoking an existence theorem.  Arbitrary callables are deliberately
not accepted on the certified path.

All filters act on zero-extended windows: entries older than the stored
window are exactly zero, so the defining series are finite sums.
"""

from dataclasses import dataclass, field

import numpy as np

from .linalg import operator_norm
from .windows import InputWindow, shift_window

_HORIZON_CAP = 10_000


class HorizonCapError(RuntimeError):
    """No truncation horizon below the hard cap meets the requested budget."""


def _lagged(arr: np.ndarray, j: int) -> np.ndarray:
    """Batch entry at lag j: arr is (B, T, d); zero beyond the stored past."""
    B, T, d = arr.shape
    if j >= T:
        return np.zeros((B, d))
    return arr[:, T - 1 - j, :]


@dataclass(frozen=True)
class TargetFilter:
    """Base for filter families; subclasses define the series and its tail."""

    in_dim: int
    out_dim: int
    input_bound: float

    #: Whether truncation_bound is an analytic fact (zoo families) or a user
    #: claim (raw callables).  Reports label the truncation term accordingly.
    certified = True

    def _check(self, w: InputWindow):
        if w.dim != self.in_dim:
            raise ValueError(f"window dim {w.dim} != filter input dim {self.in_dim}")

    def evaluate(self, w: InputWindow) -> np.ndarray:
        """The functional: output at time 0 for the zero-extended window."""
        self._check(w)
        return self.evaluate_batch(w.entries[None, :, :])[0]

    def evaluate_at(self, w: InputWindow, k: int) -> np.ndarray:
        """Filter output at time -k; by time invariance, the functional on the
        window truncated at -k."""
        return self.evaluate(shift_window(w, k))

    def evaluate_batch(self, arr: np.ndarray) -> np.ndarray:
        """(B, T, d) batch of windows -> (B, out_dim) outputs."""
        raise NotImplementedError

    def truncation_bound(self, horizon: int) -> float:
        """Upper bound on the sup (over admissible inputs) of the error made by
        forgetting everything older than lag ``horizon``."""
        raise NotImplementedError

    def choose_horizon(self, budget: float) -> int:
        """Smallest K >= 0 with truncation_bound(K) < budget."""
        if not budget > 0:
            raise ValueError(f"budget must be positive, got {budget}")
        for horizon in range(_HORIZON_CAP + 1):
            if self.truncation_bound(horizon) < budget:
                return horizon
        raise HorizonCapError(
            f"no horizon K <= {_HORIZON_CAP} has truncation bound below {budget:g}; "
            "the filter's memory decays too slowly or the budget is too small"
        )

    def truncated_map(self, horizon: int):
        """The finite-memory restriction as a map on stacked lag vectors.

        Returns a function taking batches of horizon+1 stacked lag vectors
        (most-delayed first, the present last) and returning (B, out_dim)
        outputs.  This is the fitting target for the static network stage.
        """
        if horizon < 0:
            raise ValueError(f"horizon must be >= 0, got {horizon}")
        d = self.in_dim
        copies = horizon + 1

        def truncated(u):
            u = np.atleast_2d(np.asarray(u, dtype=np.float64))
            if u.shape[1] != copies * d:
                raise ValueError(f"stacked input dim {u.shape[1]} != {copies * d}")
            return self.evaluate_batch(u.reshape(u.shape[0], copies, d))

        return truncated

    def to_json(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class FIRFilter(TargetFilter):
    """H(z) = sum_{j=0}^{J} a_j z_{-j} with finitely many matrix taps a_j."""

    coeffs: tuple = ()  # tuple of (out_dim, in_dim) arrays, lag order a_0..a_J

    def __post_init__(self):
        frozen = []
        for a in self.coeffs:
            a = np.array(a, dtype=np.float64)
            if a.shape != (self.out_dim, self.in_dim):
                raise ValueError(f"tap shape {a.shape} != ({self.out_dim}, {self.in_dim})")
            a.flags.writeable = False
            frozen.append(a)
        object.__setattr__(self, "coeffs", tuple(frozen))

    @property
    def memory(self) -> int:
        return len(self.coeffs) - 1

    def evaluate_batch(self, arr: np.ndarray) -> np.ndarray:
        out = np.zeros((arr.shape[0], self.out_dim))
        for j, a in enumerate(self.coeffs):
            out += _lagged(arr, j) @ a.T
        return out

    def truncation_bound(self, horizon: int) -> float:
        return float(
            sum(operator_norm(a) for j, a in enumerate(self.coeffs) if j > horizon)
            * self.input_bound
        )

    def to_json(self) -> dict:
        return {
            "kind": "fir",
            "coeffs": [a.tolist() for a in self.coeffs],
            "d": self.in_dim,
            "m": self.out_dim,
            "M": self.input_bound,
        }


@dataclass(frozen=True)
class ExpFadingFilter(TargetFilter):
    """H(z) = sum_{j>=0} decay^j B z_{-j}: geometric memory, closed-form tail."""

    matrix: np.ndarray = field(default_factory=lambda: np.ones((1, 1)))
    decay: float = 0.5

    def __post_init__(self):
        b = np.array(self.matrix, dtype=np.float64)
        if b.shape != (self.out_dim, self.in_dim):
            raise ValueError(f"matrix shape {b.shape} != ({self.out_dim}, {self.in_dim})")
        b.flags.writeable = False
        object.__setattr__(self, "matrix", b)
        if not 0.0 < self.decay < 1.0:
            raise ValueError(f"decay must lie in (0, 1), got {self.decay}")

    def evaluate_batch(self, arr: np.ndarray) -> np.ndarray:
        B, T, d = arr.shape
        # weights along the stored axis: entry at row t has lag T-1-t
        weights = self.decay ** np.arange(T - 1, -1, -1, dtype=np.float64)
        summed = np.einsum("t,btd->bd", weights, arr)
        return summed @ self.matrix.T

    def truncation_bound(self, horizon: int) -> float:
        return float(
            operator_norm(self.matrix)
            * self.input_bound
            * self.decay ** (horizon + 1)
            / (1.0 - self.decay)
        )

    def to_json(self) -> dict:
        return {
            "kind": "exp_fading",
            "lambda": self.decay,
            "B": self.matrix.tolist(),
            "d": self.in_dim,
            "m": self.out_dim,
            "M": self.input_bound,
        }


@dataclass(frozen=True)
class QuadTerm:
    """One quadratic interaction: b * (z_{-j} . z_{-k}), b an out_dim vector."""

    j: int
    k: int
    b: np.ndarray

    def __post_init__(self):
        v = np.array(self.b, dtype=np.float64).reshape(-1)
        v.flags.writeable = False
        object.__setattr__(self, "b", v)
        if self.j < 0 or self.k < 0:
            raise ValueError(f"lags must be >= 0, got ({self.j}, {self.k})")


@dataclass(frozen=True)
class Volterra2Filter(TargetFilter):
    """FIR part plus finitely many second-order interaction terms."""

    coeffs: tuple = ()
    quad: tuple = ()  # tuple of QuadTerm

    def __post_init__(self):
        frozen = []
        for a in self.coeffs:
            a = np.array(a, dtype=np.float64)
            if a.shape != (self.out_dim, self.in_dim):
                raise ValueError(f"tap shape {a.shape} != ({self.out_dim}, {self.in_dim})")
            a.flags.writeable = False
            frozen.append(a)
        object.__setattr__(self, "coeffs", tuple(frozen))
        for q in self.quad:
            if q.b.shape != (self.out_dim,):
                raise ValueError(f"quad coefficient shape {q.b.shape} != ({self.out_dim},)")

    def evaluate_batch(self, arr: np.ndarray) -> np.ndarray:
        out = np.zeros((arr.shape[0], self.out_dim))
        for j, a in enumerate(self.coeffs):
            out += _lagged(arr, j) @ a.T
        for q in self.quad:
            inner = np.sum(_lagged(arr, q.j) * _lagged(arr, q.k), axis=1)
            out += inner[:, None] * q.b[None, :]
        return out

    def truncation_bound(self, horizon: int) -> float:
        M = self.input_bound
        linear = sum(operator_norm(a) for j, a in enumerate(self.coeffs) if j > horizon) * M
        quadratic = sum(
            float(np.linalg.norm(q.b)) * M * M
            for q in self.quad
            if q.j > horizon or q.k > horizon
        )
        return float(linear + quadratic)

    def to_json(self) -> dict:
        return {
            "kind": "volterra2",
            "coeffs": [a.tolist() for a in self.coeffs],
            "quad": [{"j": q.j, "k": q.k, "b": q.b.tolist()} for q in self.quad],
            "d": self.in_dim,
            "m": self.out_dim,
            "M": self.input_bound,
        }


@dataclass(frozen=True)
class RawFilter(TargetFilter):
    """Escape hatch: an arbitrary user functional with a *claimed* memory.

    ``fn`` maps a (B, T, d) batch of zero-extended windows to (B, out_dim)
    and must, per the user's claim, depend only on the last
    ``claimed_memory + 1`` entries.  Nothing here checks that claim: the
    truncation term of any construction built on a raw filter is trusted,
    not proven, and reports flag it as uncertified.
    """

    fn: object = None
    claimed_memory: int = 0

    certified = False

    def __post_init__(self):
        if self.fn is None or not callable(self.fn):
            raise ValueError("RawFilter needs a callable fn")
        if self.claimed_memory < 0:
            raise ValueError(f"claimed_memory must be >= 0, got {self.claimed_memory}")

    def evaluate_batch(self, arr: np.ndarray) -> np.ndarray:
        out = np.asarray(self.fn(arr), dtype=np.float64)
        if out.shape != (arr.shape[0], self.out_dim):
            raise ValueError(f"fn returned shape {out.shape}, expected ({arr.shape[0]}, {self.out_dim})")
        return out

    def truncation_bound(self, horizon: int) -> float:
        return 0.0 if horizon >= self.claimed_memory else np.inf

    def to_json(self) -> dict:
        raise ValueError("raw filters hold an opaque callable and cannot be serialized")


def filter_from_json(obj: dict) -> TargetFilter:
    """Build a filter from its JSON spec; see each family's to_json for layout."""
    kind = obj.get("kind")
    d, m, M = int(obj["d"]), int(obj["m"]), float(obj["M"])
    if kind == "fir":
        return FIRFilter(
            in_dim=d, out_dim=m, input_bound=M,
            coeffs=tuple(np.asarray(a, dtype=np.float64) for a in obj["coeffs"]),
        )
    if kind == "exp_fading":
        return ExpFadingFilter(
            in_dim=d, out_dim=m, input_bound=M,
            matrix=np.asarray(obj["B"], dtype=np.float64),
            decay=float(obj["lambda"]),
        )
    if kind == "volterra2":
        return Volterra2Filter(
            in_dim=d, out_dim=m, input_bound=M,
            coeffs=tuple(np.asarray(a, dtype=np.float64) for a in obj.get("coeffs", [])),
            quad=tuple(
                QuadTerm(j=int(q["j"]), k=int(q["k"]), b=np.asarray(q["b"], dtype=np.float64))
                for q in obj.get("quad", [])
            ),
        )
    raise ValueError(f"unknown filter kind {kind!r}")


def filter_to_json(f: TargetFilter) -> dict:
    return f.to_json()
