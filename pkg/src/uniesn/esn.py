"""Echo state network state-space systems and their property checks.

The system is x_t = sigma(A x_{t-1} + C z_t + zeta), y_t = W x_t.  Systems
assembled by the constructor carry block-structure metadata: the reservoir
matrix A is strictly lower block-triangular with a single sub-diagonal chain
plus a final collector row, hence nilpotent of degree K+1.  Nilpotency gives
exact finite memory, which is how the echo state and fading memory properties
are certified here; the contraction test is only a fallback for arbitrary
systems.
"""

from dataclasses import dataclass

import numpy as np

from .linalg import operator_norm
from .shallow import Activation, get_activation
from .windows import InputWindow

_FIXED_POINT_TOL = 1e-12
_FIXED_POINT_MAX_ITER = 100_000


def _freeze(arr) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, order="C")
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class BlockStructure:
    """State-block widths of an assembled system.

    widths[i] for i < horizon is the width of the i-th identity-carrier block;
    widths[-1] is the collector block driven by the static net.
    """

    widths: tuple

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 1 or any(w < 1 for w in self.widths):
            raise ValueError(f"widths must be a non-empty tuple of positives, got {self.widths}")

    @property
    def horizon(self) -> int:
        return len(self.widths) - 1

    @property
    def total(self) -> int:
        return sum(self.widths)

    def offsets(self) -> np.ndarray:
        """Start index of each block in the stacked state vector."""
        return np.concatenate([[0], np.cumsum(self.widths)])


@dataclass(frozen=True)
class ESNParams:
    """Full parameterization of the state-space system."""

    A: np.ndarray
    C: np.ndarray
    zeta: np.ndarray
    W: np.ndarray
    activation: Activation
    structure: BlockStructure | None = None

    def __post_init__(self):
        object.__setattr__(self, "A", _freeze(self.A))
        object.__setattr__(self, "C", _freeze(self.C))
        object.__setattr__(self, "zeta", _freeze(self.zeta))
        object.__setattr__(self, "W", _freeze(self.W))
        N = self.A.shape[0]
        if self.A.shape != (N, N):
            raise ValueError(f"A must be square, got {self.A.shape}")
        if self.C.ndim != 2 or self.C.shape[0] != N:
            raise ValueError(f"C shape {self.C.shape} incompatible with N={N}")
        if self.zeta.shape != (N,):
            raise ValueError(f"zeta shape {self.zeta.shape} != ({N},)")
        if self.W.ndim != 2 or self.W.shape[1] != N:
            raise ValueError(f"W shape {self.W.shape} incompatible with N={N}")
        if self.structure is not None and self.structure.total != N:
            raise ValueError(
                f"structure widths sum to {self.structure.total}, but N={N}"
            )

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    @property
    def in_dim(self) -> int:
        return self.C.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]

    def step(self, x_prev, z) -> np.ndarray:
        """One update: sigma(A x_prev + C z + zeta)."""
        x_prev = np.asarray(x_prev, dtype=np.float64)
        z = np.asarray(z, dtype=np.float64)
        if x_prev.shape != (self.state_dim,):
            raise ValueError(f"state shape {x_prev.shape} != ({self.state_dim},)")
        if z.shape != (self.in_dim,):
            raise ValueError(f"input shape {z.shape} != ({self.in_dim},)")
        return self.activation(self.A @ x_prev + self.C @ z + self.zeta)

    def run(self, w: InputWindow, x_init) -> np.ndarray:
        """Iterate step over the window entries in time order.

        Returns the (T, N) trajectory x_{-(T-1)}, ..., x_0 started from x_init.
        """
        if w.dim != self.in_dim:
            raise ValueError(f"window dim {w.dim} != input dim {self.in_dim}")
        x = np.asarray(x_init, dtype=np.float64)
        if x.shape != (self.state_dim,):
            raise ValueError(f"state shape {x.shape} != ({self.state_dim},)")
        traj = np.empty((w.length, self.state_dim))
        for t in range(w.length):
            x = self.step(x, w.entries[t])
            traj[t] = x
        return traj

    def run_batch(self, arr: np.ndarray, x_init: np.ndarray | None = None) -> np.ndarray:
        """Final states for a (B, T, d) batch of windows, started from x_init.

        Only the time-0 state is returned, shape (B, N).
        """
        B, T, d = arr.shape
        if d != self.in_dim:
            raise ValueError(f"window dim {d} != input dim {self.in_dim}")
        X = np.zeros((B, self.state_dim)) if x_init is None else np.tile(x_init, (B, 1))
        At, Ct = self.A.T, self.C.T
        for t in range(T):
            X = self.activation(X @ At + arr[:, t, :] @ Ct + self.zeta)
        return X

    def functional(self, w: InputWindow) -> np.ndarray:
        """W x_0 for the unique zero-extended solution of the state equation.

        Structured systems need a window of length >= horizon+1; the result is
        then independent of the initial state, so the zero state is used.
        Unstructured systems must be contractive: the zero-input fixed point
        (the exact state under all-zero extension) is found by iteration, then
        the window is run from it.
        """
        return self.W @ self._solve_state(w)

    def functional_batch(self, arr: np.ndarray) -> np.ndarray:
        """(B, T, d) batch of windows -> (B, m) outputs; see functional."""
        self._require_solvable(arr.shape[1])
        if self.structure is None:
            x0 = self._zero_input_fixed_point()
            return self.run_batch(arr, x_init=x0) @ self.W.T
        return self.run_batch(arr) @ self.W.T

    def _require_solvable(self, T: int):
        if self.structure is not None:
            need = self.structure.horizon + 1
            if T < need:
                raise ValueError(
                    f"window of length {T} too short: structured system needs >= {need}"
                )
        else:
            rho = check_contraction(self)
            if not rho < 1.0:
                raise ValueError(
                    f"cannot certify a unique solution: L_sigma * ||A|| = {rho:g} >= 1 "
                    "and no nilpotent structure is present"
                )

    def _zero_input_fixed_point(self) -> np.ndarray:
        x = np.zeros(self.state_dim)
        zero_in = np.zeros(self.in_dim)
        for _ in range(_FIXED_POINT_MAX_ITER):
            x_next = self.step(x, zero_in)
            if float(np.linalg.norm(x_next - x)) < _FIXED_POINT_TOL:
                return x_next
            x = x_next
        raise RuntimeError("zero-input burn-in did not converge")

    def _solve_state(self, w: InputWindow) -> np.ndarray:
        self._require_solvable(w.length)
        if self.structure is None:
            x0 = self._zero_input_fixed_point()
            return self.run(w, x0)[-1]
        return self.run(w, np.zeros(self.state_dim))[-1]

    def to_json(self) -> dict:
        return {
            "N": self.state_dim,
            "d": self.in_dim,
            "m": self.out_dim,
            "activation": self.activation.kind,
            "A": self.A.tolist(),
            "C": self.C.tolist(),
            "zeta": self.zeta.tolist(),
            "W": self.W.tolist(),
            "structure": (
                {"widths": list(self.structure.widths), "K": self.structure.horizon}
                if self.structure is not None
                else None
            ),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ESNParams":
        structure = None
        if obj.get("structure") is not None:
            structure = BlockStructure(widths=tuple(obj["structure"]["widths"]))
        return cls(
            A=np.asarray(obj["A"], dtype=np.float64),
            C=np.asarray(obj["C"], dtype=np.float64),
            zeta=np.asarray(obj["zeta"], dtype=np.float64),
            W=np.asarray(obj["W"], dtype=np.float64),
            activation=get_activation(obj["activation"]),
            structure=structure,
        )


def esn_step(p: ESNParams, x_prev, z) -> np.ndarray:
    return p.step(x_prev, z)


def esn_run(p: ESNParams, w: InputWindow, x_init) -> np.ndarray:
    return p.run(w, x_init)


def esn_functional(p: ESNParams, w: InputWindow) -> np.ndarray:
    return p.functional(w)


def check_nilpotent(p: ESNParams) -> tuple[bool, int]:
    """Verify the assembled sparsity pattern and that A^(horizon+1) == 0 exactly.

    Allowed nonzero blocks: the sub-diagonal chain (block row r, column r-1)
    for 1 <= r <= horizon, and the last block row at columns 0..horizon-1.
    Everything else, including the entire first block row and the last
    diagonal block, must be exactly zero.  Returns (False, 0) on any violation.
    """
    if p.structure is None:
        raise ValueError("nilpotency check needs block-structure metadata")
    K = p.structure.horizon
    off = p.structure.offsets()
    nblocks = K + 1
    allowed = np.zeros((nblocks, nblocks), dtype=bool)
    for r in range(1, K):
        allowed[r, r - 1] = True  # identity-carrier chain
    if K >= 1:
        allowed[K, : K] = True  # collector row reads every carrier block
    for r in range(nblocks):
        for c in range(nblocks):
            if allowed[r, c]:
                continue
            block = p.A[off[r] : off[r + 1], off[c] : off[c + 1]]
            if np.any(block != 0.0):
                return False, 0
    power = np.eye(p.state_dim)
    for _ in range(K + 1):
        power = power @ p.A
    if np.any(power != 0.0):
        return False, 0
    return True, K + 1


def check_esp_empirical(p: ESNParams, w: InputWindow, trials: int, seed: int) -> bool:
    """Do `trials` random initial states all lead to the same time-0 state?

    Structured systems must agree bitwise (init dependence vanishes after
    horizon+1 steps by structure); contractive unstructured systems within
    1e-9 (geometric convergence is not exact).
    """
    if trials < 1:
        raise ValueError(f"need trials >= 1, got {trials}")
    if p.structure is not None and w.length < p.structure.horizon + 1:
        raise ValueError(
            f"window of length {w.length} too short: structured system needs "
            f">= {p.structure.horizon + 1}"
        )
    rng = np.random.default_rng(seed)
    finals = []
    for _ in range(trials):
        x_init = rng.standard_normal(p.state_dim)
        finals.append(p.run(w, x_init)[-1])
    ref = finals[0]
    if p.structure is not None:
        return all(np.array_equal(ref, x) for x in finals[1:])
    return all(float(np.linalg.norm(ref - x)) < 1e-9 for x in finals[1:])


def check_finite_memory(p: ESNParams, w1: InputWindow, w2: InputWindow) -> bool:
    """Outputs must agree bitwise when the windows share their last horizon+1 entries."""
    if p.structure is None:
        raise ValueError("finite-memory check needs block-structure metadata")
    K = p.structure.horizon
    tail1 = w1.entries[w1.length - (K + 1) :]
    tail2 = w2.entries[w2.length - (K + 1) :]
    if w1.length < K + 1 or w2.length < K + 1 or not np.array_equal(tail1, tail2):
        raise ValueError(f"windows must agree on their last {K + 1} entries")
    return bool(np.array_equal(p.functional(w1), p.functional(w2)))


def check_contraction(p: ESNParams) -> float:
    """L_sigma * ||A||: below 1 this certifies a unique solution and fading
    memory for any system of this form.  Assembled systems do not need it."""
    return p.activation.lipschitz_const * operator_norm(p.A)
