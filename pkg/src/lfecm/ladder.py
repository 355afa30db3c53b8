"""Geometric RC-ladder approximation of a constant phase element (CPE).

A CPE has impedance 1/(Q (jw)^phi) with exponent 0 < phi < 1. Over a
finite frequency band it is well approximated by n series-connected
parallel-RC branches whose element values follow geometric progressions

    R_k = R1 * a**(k-1),   C_k = C1 * b**(k-1),   0 < a, b < 1,

closed by a series resistor r_inf that stands in for the truncated fast
branches. The product q = a*b fixes the spacing of the branch corner
frequencies, while a alone encodes the exponent phi. Anchoring the
ladder magnitude to the exact CPE magnitude at a band-centre frequency
makes the construction invertible: fitted ladder parameters map back to
(Q, phi), which is what the estimator relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi

__all__ = [
    "CpeTriple",
    "DecompositionConfig",
    "LadderNetwork",
    "ReducedTheta",
    "ripple_coefficient",
    "ratios",
    "branch_count",
    "z_cpe",
    "z_ladder",
    "ladder_impedance",
    "omega_avg",
    "ladder_from_cpe",
    "decompose",
    "phi_from_ratio",
    "reconstruct",
]


@dataclass(frozen=True)
class CpeTriple:
    """Low-frequency target parameters: series resistance plus CPE pair.

    r_sigma is the lumped series resistance in ohm, q_coef the CPE
    coefficient in S*s^phi and phi the CPE exponent.
    """

    r_sigma: float
    q_coef: float
    phi: float

    def __post_init__(self):
        object.__setattr__(self, "r_sigma", float(self.r_sigma))
        object.__setattr__(self, "q_coef", float(self.q_coef))
        object.__setattr__(self, "phi", float(self.phi))
        if not self.r_sigma > 0.0:
            raise ValueError(f"r_sigma must be positive, got {self.r_sigma}")
        if not self.q_coef > 0.0:
            raise ValueError(f"q_coef must be positive, got {self.q_coef}")
        if not 0.0 < self.phi < 1.0:
            raise ValueError(f"phi must lie in (0, 1), got {self.phi}")

    def as_array(self) -> np.ndarray:
        return np.array([self.r_sigma, self.q_coef, self.phi])


@dataclass(frozen=True)
class DecompositionConfig:
    """Settings of the ladder construction.

    n_branches: number of parallel-RC branches.
    f_max: corner frequency of the fastest branch in Hz.
    delta_phi: maximum tolerated phase ripple in radians (0 gives the
        densest spacing q = 0.24).
    """

    n_branches: int
    f_max: float
    delta_phi: float = 0.0

    def __post_init__(self):
        if int(self.n_branches) != self.n_branches or self.n_branches < 1:
            raise ValueError(f"n_branches must be an integer >= 1, got {self.n_branches}")
        object.__setattr__(self, "n_branches", int(self.n_branches))
        object.__setattr__(self, "f_max", float(self.f_max))
        object.__setattr__(self, "delta_phi", float(self.delta_phi))
        if not self.f_max > 0.0:
            raise ValueError(f"f_max must be positive, got {self.f_max}")
        if self.delta_phi < 0.0:
            raise ValueError(f"delta_phi must be >= 0, got {self.delta_phi}")


@dataclass(frozen=True)
class LadderNetwork:
    """Decomposed CPE: geometric RC ladder plus corrective resistor."""

    r1: float
    c1: float
    a: float
    b: float
    n: int
    r_inf: float
    q_const: float

    def __post_init__(self):
        for name in ("r1", "c1", "a", "b", "r_inf", "q_const"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "n", int(self.n))
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not (self.r1 > 0.0 and self.c1 > 0.0):
            raise ValueError("r1 and c1 must be positive")
        if not (0.0 < self.a < 1.0 and 0.0 < self.b < 1.0):
            raise ValueError(f"ratios must lie in (0, 1), got a={self.a}, b={self.b}")
        if not math.isclose(self.a * self.b, self.q_const, rel_tol=1e-9):
            raise ValueError("a*b does not match q_const")
        r_inf_ref = self.r1 * self.a**self.n / (1.0 - self.a)
        if not math.isclose(self.r_inf, r_inf_ref, rel_tol=1e-9, abs_tol=1e-300):
            raise ValueError("r_inf inconsistent with r1, a, n")

    @property
    def branch_resistances(self) -> np.ndarray:
        return self.r1 * self.a ** np.arange(self.n)

    @property
    def branch_capacitances(self) -> np.ndarray:
        return self.c1 * self.b ** np.arange(self.n)

    @property
    def time_constants(self) -> np.ndarray:
        return (self.r1 * self.c1) * (self.a * self.b) ** np.arange(self.n)

    @property
    def corner_frequencies(self) -> np.ndarray:
        return 1.0 / (TWO_PI * self.time_constants)

    @property
    def f_min(self) -> float:
        """Corner frequency of the slowest branch (k = 1)."""
        return 1.0 / (TWO_PI * self.r1 * self.c1)

    @property
    def f_max(self) -> float:
        """Corner frequency of the fastest branch (k = n)."""
        return self.f_min * self.q_const ** (1 - self.n)

    def to_dict(self) -> dict:
        return {
            "r1": self.r1,
            "c1": self.c1,
            "a": self.a,
            "b": self.b,
            "n": self.n,
            "r_inf": self.r_inf,
            "q_const": self.q_const,
        }


@dataclass(frozen=True)
class ReducedTheta:
    """Free parameters of the reduced fit: [r_sigma, r1, a, f_max].

    The remaining ladder values follow from the equality constraints
    b = q/a and 2*pi*r1*c1*f_max*q**(n-1) = 1, so the feasible set of
    the reduced vector is a plain axis-aligned box.
    """

    r_sigma: float
    r1: float
    a: float
    f_max: float

    def __post_init__(self):
        for name in ("r_sigma", "r1", "a", "f_max"):
            object.__setattr__(self, name, float(getattr(self, name)))
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.a < 1.0:
            raise ValueError(f"a must lie in (0, 1), got {self.a}")

    def as_array(self) -> np.ndarray:
        return np.array([self.r_sigma, self.r1, self.a, self.f_max])

    @classmethod
    def from_array(cls, x) -> "ReducedTheta":
        r_sigma, r1, a, f_max = (float(v) for v in x)
        return cls(r_sigma, r1, a, f_max)


def ripple_coefficient(delta_phi: float) -> float:
    """Spacing constant q of the ladder for a peak phase ripple (radians)."""
    if delta_phi < 0.0:
        raise ValueError(f"delta_phi must be >= 0, got {delta_phi}")
    return 0.24 / (1.0 + delta_phi * 180.0 / math.pi)


def ratios(phi: float, q: float) -> tuple[float, float]:
    """Geometric ratios (a, b) realizing exponent phi at spacing q."""
    if not 0.0 < phi < 1.0:
        raise ValueError(f"phi must lie in (0, 1), got {phi}")
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    a = q**phi
    return a, q / a


def branch_count(f_min: float, f_max: float, q: float) -> int:
    """Number of branches needed to span [f_min, f_max] at spacing q."""
    if not 0.0 < f_min < f_max:
        raise ValueError(f"need 0 < f_min < f_max, got {f_min}, {f_max}")
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    ratio = (math.log(f_min) - math.log(f_max)) / math.log(q)
    nearest = round(ratio)
    # Absorb float round-off when the band is an exact number of q-decades.
    n = nearest if abs(ratio - nearest) < 1e-9 else math.ceil(ratio)
    return max(int(n), 1)


def z_cpe(q_coef: float, phi: float, omega):
    """Exact CPE impedance 1/(Q (jw)^phi) at angular frequency omega.

    Evaluated as exp(-phi*(ln w + j pi/2))/Q so the principal branch is
    used for every positive omega. Accepts scalars or arrays.
    """
    if q_coef <= 0.0:
        raise ValueError(f"q_coef must be positive, got {q_coef}")
    w = np.asarray(omega, dtype=float)
    if np.any(w <= 0.0):
        raise ValueError("omega must be positive")
    z = np.exp(-phi * (np.log(w) + 1j * (math.pi / 2.0))) / q_coef
    return complex(z) if w.ndim == 0 else z


def ladder_impedance(r1, c1, a, b, n, r_inf, omega):
    """Impedance of a geometric RC ladder from its raw element values."""
    w = np.asarray(omega, dtype=float)
    k = np.arange(n)
    r_k = r1 * a**k
    tau_k = (r1 * c1) * (a * b) ** k
    zsum = r_inf + (r_k[:, None] / (1.0 + 1j * w.reshape(-1)[None, :] * tau_k[:, None])).sum(axis=0)
    if w.ndim == 0:
        return complex(zsum[0])
    return zsum.reshape(w.shape)


def z_ladder(net: LadderNetwork, omega):
    """Impedance of the decomposed network, scalar or array omega."""
    return ladder_impedance(net.r1, net.c1, net.a, net.b, net.n, net.r_inf, omega)


def omega_avg(r1: float, c1: float, a: float, b: float, q: float, n: int) -> float:
    """Band-centre anchor frequency of an n-branch ladder (rad/s)."""
    return (a / b) ** 0.25 / (r1 * c1 * q ** math.ceil(n / 2 - 1))


def ladder_from_cpe(
    q_coef: float,
    phi: float,
    n: int,
    q: float,
    f_max: float,
    c1_anchor: float = 1.0,
) -> LadderNetwork:
    """Construct the n-branch ladder approximating CPE(q_coef, phi).

    The slowest-branch product R1*C1 is pinned by f_min = f_max*q**(n-1)
    and the split between R1 and C1 is fixed by matching the ladder
    magnitude to the CPE magnitude at the anchor frequency. The
    c1_anchor starting value is arbitrary; the gain step removes it.
    """
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if f_max <= 0.0:
        raise ValueError(f"f_max must be positive, got {f_max}")
    if q_coef <= 0.0:
        raise ValueError(f"q_coef must be positive, got {q_coef}")
    a, b = ratios(phi, q)
    f_min = f_max * q ** (n - 1)
    c1p = float(c1_anchor)
    r1p = 1.0 / (TWO_PI * f_min * c1p)
    w_avg = omega_avg(r1p, c1p, a, b, q, n)
    r_inf_p = r1p * a**n / (1.0 - a)
    z_mag = abs(ladder_impedance(r1p, c1p, a, b, n, r_inf_p, w_avg))
    gain = 1.0 / (q_coef * w_avg**phi * z_mag)
    r1 = gain * r1p
    return LadderNetwork(
        r1=r1,
        c1=c1p / gain,
        a=a,
        b=b,
        n=n,
        r_inf=r1 * a**n / (1.0 - a),
        q_const=q,
    )


def decompose(p: CpeTriple, cfg: DecompositionConfig) -> LadderNetwork:
    """Decompose the CPE of p into a ladder per the given config."""
    q = ripple_coefficient(cfg.delta_phi)
    return ladder_from_cpe(p.q_coef, p.phi, cfg.n_branches, q, cfg.f_max)


def phi_from_ratio(a: float, q: float) -> float:
    """Invert a = q**phi, i.e. the base-q logarithm of a."""
    if not 0.0 < a < 1.0:
        raise ValueError(f"a must lie in (0, 1), got {a}")
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    return math.log(a) / math.log(q)


def reconstruct(theta: ReducedTheta, n: int, q: float) -> CpeTriple:
    """Map fitted reduced parameters back to (r_sigma, q_coef, phi).

    phi follows from the ratio a alone; c1 and b are recovered through
    the ladder equality constraints; the CPE coefficient is read off the
    magnitude anchor at the ladder's own band-centre frequency. Raises
    ValueError when a falls outside (q, 1), where no valid exponent in
    (0, 1) exists.
    """
    phi = phi_from_ratio(theta.a, q)
    if not 0.0 < phi < 1.0:
        raise ValueError(
            f"ratio a={theta.a} maps to exponent {phi} outside (0, 1); "
            f"need q < a < 1 with q={q}"
        )
    c1 = q ** (1 - n) / (TWO_PI * theta.r1 * theta.f_max)
    b = q / theta.a
    w_avg = omega_avg(theta.r1, c1, theta.a, b, q, n)
    r_inf = theta.r1 * theta.a**n / (1.0 - theta.a)
    z_mag = abs(ladder_impedance(theta.r1, c1, theta.a, b, n, r_inf, w_avg))
    q_coef = 1.0 / (w_avg**phi * z_mag)
    return CpeTriple(r_sigma=theta.r_sigma, q_coef=q_coef, phi=phi)
