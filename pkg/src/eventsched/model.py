"""Multi-process LTI system set and basic matrix predicates."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

SYM_TOL = 1e-8
EIG_TOL = 1e-10


def _as_matrix(value, name: str) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(value, dtype=float))
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix, got shape {arr.shape}")
    return arr


def symmetrize(X: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Return (X + X^T)/2, rejecting inputs whose asymmetry exceeds SYM_TOL (relative)."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] != X.shape[1]:
        raise ValueError(f"{name} must be square, got shape {X.shape}")
    scale = max(np.linalg.norm(X), 1.0)
    if np.linalg.norm(X - X.T) > SYM_TOL * scale:
        raise ValueError(f"{name} is not symmetric")
    return 0.5 * (X + X.T)


def spectral_radius(A) -> float:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"spectral_radius needs a square matrix, got shape {A.shape}")
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def is_pd(X: np.ndarray, tol: float = EIG_TOL) -> bool:
    return bool(np.linalg.eigvalsh(X).min() > tol)


def is_psd(X: np.ndarray, tol: float = EIG_TOL) -> bool:
    scale = max(1.0, float(np.abs(X).max(initial=0.0)))
    return bool(np.linalg.eigvalsh(X).min() >= -tol * scale)


@dataclass(frozen=True, eq=False)
class LtiSystem:
    """One process/sensor pair ``x(k+1) = A x(k) + w``, ``y(k) = C x(k) + v``.

    ``Pi0`` is the initial state covariance; it defaults to ``Q``. Symmetric
    inputs are symmetrized on construction and all arrays are made read-only.
    Positive definiteness is *not* enforced here, see :func:`validate_system`.
    """

    A: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    Pi0: np.ndarray | None = None

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        C = _as_matrix(self.C, "C")
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got shape {A.shape}")
        n = A.shape[0]
        if C.shape[1] != n:
            raise ValueError(f"dimension mismatch: C has {C.shape[1]} columns, A is {n}x{n}")
        Q = symmetrize(_as_matrix(self.Q, "Q"), "Q")
        R = symmetrize(_as_matrix(self.R, "R"), "R")
        if Q.shape != (n, n):
            raise ValueError(f"dimension mismatch: Q is {Q.shape}, expected {(n, n)}")
        if R.shape != (C.shape[0], C.shape[0]):
            raise ValueError(f"dimension mismatch: R is {R.shape}, expected {(C.shape[0],) * 2}")
        Pi0 = Q.copy() if self.Pi0 is None else symmetrize(_as_matrix(self.Pi0, "Pi0"), "Pi0")
        if Pi0.shape != (n, n):
            raise ValueError(f"dimension mismatch: Pi0 is {Pi0.shape}, expected {(n, n)}")
        for name, arr in (("A", A), ("C", C), ("Q", Q), ("R", R), ("Pi0", Pi0)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def dim_x(self) -> int:
        return self.A.shape[0]

    @property
    def dim_y(self) -> int:
        return self.C.shape[0]

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("A", "C", "Q", "R", "Pi0")}


@dataclass(frozen=True)
class SystemSet:
    """Ordered collection of mutually independent systems."""

    systems: tuple[LtiSystem, ...]

    def __post_init__(self):
        systems = tuple(self.systems)
        if not systems:
            raise ValueError("a system set needs at least one system")
        object.__setattr__(self, "systems", systems)

    @property
    def n(self) -> int:
        return len(self.systems)

    def __len__(self) -> int:
        return len(self.systems)

    def __iter__(self) -> Iterator[LtiSystem]:
        return iter(self.systems)

    def __getitem__(self, i: int) -> LtiSystem:
        return self.systems[i]


@dataclass
class ValidationReport:
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


def validate_system(sys: LtiSystem) -> ValidationReport:
    """Check noise covariances, detectability (via DARE convergence) and instability.

    Dimension mismatches are caught when the :class:`LtiSystem` is built.
    """
    from .filtering import DetectabilityError, solve_dare

    report = ValidationReport()
    if not is_pd(sys.Q):
        report.errors.append("Q not PD")
    if not is_pd(sys.R):
        report.errors.append("R not PD")
    if not is_psd(sys.Pi0):
        report.errors.append("Pi0 not PSD")
    if spectral_radius(sys.A) <= 1.0:
        report.warnings.append(
            f"A is not unstable (spectral radius {spectral_radius(sys.A):.6g} <= 1)"
        )
    if report.ok:
        try:
            solve_dare(sys)
        except DetectabilityError as exc:
            report.errors.append(f"not detectable: {exc}")
    return report


def check_systems(systems: Sequence[LtiSystem]) -> None:
    """Raise on the first invalid system, emit instability warnings."""
    for i, sys in enumerate(systems):
        rep = validate_system(sys)
        if not rep.ok:
            raise ValueError(f"system {i}: " + "; ".join(rep.errors))
        for w in rep.warnings:
            warnings.warn(f"system {i}: {w}", stacklevel=2)


def two_process_example() -> SystemSet:
    """The two-process benchmark used throughout the tests and demos."""
    s1 = LtiSystem(
        A=[[2.0, 1.0], [0.0, 1.0]],
        C=[[1.0, 2.0]],
        Q=np.eye(2),
        R=[[1.0]],
    )
    s2 = LtiSystem(
        A=[[1.1, 1.0], [0.0, 1.0]],
        C=[[1.0, 1.0]],
        Q=3.0 * np.eye(2),
        R=[[1.0]],
    )
    return SystemSet((s1, s2))
