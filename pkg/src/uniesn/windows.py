"""Finite windows of bounded semi-infinite input sequences.

A semi-infinite input taking values in the closed Euclidean ball of radius M
is represented by its last T entries; everything further in the past is an
implicit zero.  Every target filter in the zoo has fading memory, so the
zero-extension error is controlled by an analytic truncation bound, and the
constructed networks have exact finite memory, which makes windows of
sufficient length lossless.

Entries are stored past-to-present: ``entries[0]`` is the oldest value and
``entries[-1]`` is the value at time 0.
"""

from dataclasses import dataclass

import numpy as np


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, order="C")
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class InputWindow:
    """The last ``T`` entries of a bounded input sequence.

    entries: (T, d) array, rows ordered past-to-present (row -1 is time 0).
    bound:   radius M of the closed ball every entry must lie in.
    """

    entries: np.ndarray
    bound: float

    def __post_init__(self):
        object.__setattr__(self, "entries", _freeze(self.entries))
        if self.entries.ndim != 2:
            raise ValueError(f"entries must be a (T, d) array, got shape {self.entries.shape}")
        T, d = self.entries.shape
        if T < 1 or d < 1:
            raise ValueError(f"window needs T >= 1 and d >= 1, got T={T}, d={d}")
        if not self.bound > 0:
            raise ValueError(f"bound must be positive, got {self.bound}")
        norms = np.linalg.norm(self.entries, axis=1)
        if np.any(norms > self.bound):
            worst = int(np.argmax(norms))
            raise ValueError(
                f"entry at position {worst} has norm {norms[worst]!r} > bound {self.bound!r}; "
                "input lies outside the admissible ball"
            )

    @property
    def length(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]

    def at_time(self, t: int) -> np.ndarray:
        """Entry at time t <= 0; zero vector beyond the stored past."""
        if t > 0:
            raise ValueError(f"window holds no future entries, got t={t}")
        idx = self.length - 1 + t
        if idx < 0:
            return np.zeros(self.dim)
        return self.entries[idx]

    def to_json(self) -> dict:
        return {
            "time_order": "past_to_present",
            "dim": self.dim,
            "bound": self.bound,
            "entries": self.entries.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "InputWindow":
        if obj.get("time_order") != "past_to_present":
            raise ValueError(f"unsupported time_order {obj.get('time_order')!r}")
        return cls(entries=np.asarray(obj["entries"], dtype=np.float64), bound=float(obj["bound"]))


@dataclass(frozen=True)
class SupMetricEstimate:
    """Maximum of a sampled set: a certified lower bound on the true sup."""

    value: float
    sample_count: int
    sampler_seed: int


def make_window(entries, M: float) -> InputWindow:
    """Validate a list of d-vectors as a window with per-entry norm <= M."""
    arr = np.atleast_2d(np.asarray(entries, dtype=np.float64))
    return InputWindow(entries=arr, bound=float(M))


def shift_window(w: InputWindow, k: int) -> InputWindow:
    """Drop the last ``k`` entries: the entry formerly at time -k becomes time 0.

    Realizes time invariance: a filter's output at time -k equals its
    functional evaluated on the input truncated at -k.
    """
    if k < 0:
        raise ValueError(f"shift must be non-negative, got {k}")
    if k >= w.length:
        raise ValueError(f"cannot shift by {k}: window has only {w.length} entries")
    if k == 0:
        return w
    return InputWindow(entries=w.entries[: w.length - k], bound=w.bound)


def sample_ball(d: int, R: float, n: int, seed: int) -> np.ndarray:
    """``n`` points drawn uniformly on the closed ball of radius R in d-space.

    Returns an (n, d) array.  The first point is always the origin and the
    second (when n >= 2) is the boundary probe R*e_1, so sampled maxima over
    the ball always see the boundary.  Bitwise reproducible from ``seed``.
    """
    if d < 1 or n < 1:
        raise ValueError(f"need d >= 1 and n >= 1, got d={d}, n={n}")
    if not R > 0:
        raise ValueError(f"radius must be positive, got {R}")
    out = np.zeros((n, d))
    if n >= 2:
        out[1, 0] = R
    if n > 2:
        rng = np.random.default_rng(seed)
        m = n - 2
        dirs = rng.standard_normal((m, d))
        norms = np.linalg.norm(dirs, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        radii = R * rng.random(m) ** (1.0 / d)
        out[2:] = dirs / norms * radii[:, None]
    return out


def sample_product_ball(d: int, R: float, copies: int, n: int, seed: int) -> np.ndarray:
    """``n`` points of the product of ``copies`` d-balls, stacked to (n, copies*d).

    Each d-slot is sampled independently and uniformly on its ball.  Row 0 is
    all zeros; row 1 (when n >= 2) puts the boundary probe R*e_1 in every slot.
    """
    if copies < 1:
        raise ValueError(f"need copies >= 1, got {copies}")
    if d < 1 or n < 1:
        raise ValueError(f"need d >= 1 and n >= 1, got d={d}, n={n}")
    if not R > 0:
        raise ValueError(f"radius must be positive, got {R}")
    out = np.zeros((n, copies * d))
    if n >= 2:
        out[1, 0::d] = R
    if n > 2:
        rng = np.random.default_rng(seed)
        m = n - 2
        dirs = rng.standard_normal((m, copies, d))
        norms = np.linalg.norm(dirs, axis=2, keepdims=True)
        norms[norms == 0] = 1.0
        radii = R * rng.random((m, copies)) ** (1.0 / d)
        out[2:] = (dirs / norms * radii[:, :, None]).reshape(m, copies * d)
    return out


def sample_window_array(d: int, M: float, T: int, n: int, seed: int) -> np.ndarray:
    """``n`` windows of length T as an (n, T, d) array, entries uniform on the M-ball.

    Row 0 is the all-zero window; row 1 (when n >= 2) is the constant boundary
    window with every entry M*e_1.
    """
    if T < 1:
        raise ValueError(f"need T >= 1, got {T}")
    if d < 1 or n < 1:
        raise ValueError(f"need d >= 1 and n >= 1, got d={d}, n={n}")
    if not M > 0:
        raise ValueError(f"bound must be positive, got {M}")
    out = np.zeros((n, T, d))
    if n >= 2:
        out[1, :, 0] = M
    if n > 2:
        rng = np.random.default_rng(seed)
        m = n - 2
        dirs = rng.standard_normal((m, T, d))
        norms = np.linalg.norm(dirs, axis=2, keepdims=True)
        norms[norms == 0] = 1.0
        radii = M * rng.random((m, T)) ** (1.0 / d)
        out[2:] = dirs / norms * radii[:, :, None]
    return out


def sample_windows(d: int, M: float, T: int, n: int, seed: int) -> list[InputWindow]:
    """As :func:`sample_window_array`, wrapped into :class:`InputWindow` objects."""
    arr = sample_window_array(d, M, T, n, seed)
    return [InputWindow(entries=arr[i], bound=M) for i in range(n)]


def weighted_distance(w1: InputWindow, w2: InputWindow, decay: float = 0.5) -> float:
    """Geometric-weight distance sum_{t<=0} decay^|t| * ||z1_t - z2_t||.

    Metrizes the product topology on fixed-bound sequences; the shorter window
    is zero-extended to the common length.
    """
    if not 0.0 < decay < 1.0:
        raise ValueError(f"decay must lie in (0, 1), got {decay}")
    if w1.dim != w2.dim:
        raise ValueError(f"dimension mismatch: {w1.dim} vs {w2.dim}")
    T = max(w1.length, w2.length)
    a = np.zeros((T, w1.dim))
    b = np.zeros((T, w2.dim))
    a[T - w1.length :] = w1.entries
    b[T - w2.length :] = w2.entries
    diffs = np.linalg.norm(a - b, axis=1)
    weights = decay ** np.arange(T - 1, -1, -1, dtype=np.float64)
    return float(weights @ diffs)


def estimate_sup_gap(f, g, windows: list[InputWindow], seed: int = 0) -> SupMetricEstimate:
    """Sampled sup of ||f(w) - g(w)|| over the given windows.

    The maximum over a finite sample is a lower bound on the true sup over
    all admissible inputs; callers quote it together with the sample count.
    """
    if not windows:
        raise ValueError("need at least one window")
    best = 0.0
    for w in windows:
        gap = float(np.linalg.norm(np.asarray(f(w)) - np.asarray(g(w))))
        if gap > best:
            best = gap
    return SupMetricEstimate(value=best, sample_count=len(windows), sampler_seed=seed)
