"""Splitting schemes built from drift (A) and kick (B) flows.

A scheme is stored in the written composition order used for operator
products: ``((B, b_r), (A, a_r), ..., (B, b_1), (A, a_1))`` means

    psi_h = phi^B_{b_r h} o phi^A_{a_r h} o ... o phi^B_{b_1 h} o phi^A_{a_1 h}

so the *last* entry acts first.  Zero coefficients are dropped on
construction, which lets the same type hold schemes that start and end with
either flow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

DRIFT = "A"
KICK = "B"

_CONSISTENCY_TOL = 1e-14


@dataclass(frozen=True)
class SplittingScheme:
    """Ordered drift/kick coefficient sequence defining one integrator step.

    Attributes:
        coeffs: ``(label, fraction)`` pairs in written (right-to-left acting)
            order; ``label`` is ``"A"`` (drift) or ``"B"`` (kick) and
            ``fraction`` is the duration as a fraction of the step size.
        name: Human readable label used in reports.
    """

    coeffs: tuple[tuple[str, float], ...]
    name: str = "custom"

    def __post_init__(self):
        cleaned = []
        for label, x in self.coeffs:
            if label not in (DRIFT, KICK):
                raise ValueError(f"unknown flow label {label!r}")
            x = float(x)
            if x == 0.0:
                continue
            if cleaned and cleaned[-1][0] == label:
                cleaned[-1] = (label, cleaned[-1][1] + x)
            else:
                cleaned.append((label, x))
        if not cleaned:
            raise ValueError("scheme has no nonzero coefficients")
        object.__setattr__(self, "coeffs", tuple(cleaned))
        sum_a = math.fsum(x for k, x in cleaned if k == DRIFT)
        sum_b = math.fsum(x for k, x in cleaned if k == KICK)
        if abs(sum_a - 1.0) > _CONSISTENCY_TOL or abs(sum_b - 1.0) > _CONSISTENCY_TOL:
            raise ValueError(
                f"inconsistent scheme: sum of drifts {sum_a!r}, sum of kicks {sum_b!r}"
            )

    @property
    def palindromic(self) -> bool:
        return all(
            k1 == k2 and abs(x1 - x2) <= 1e-14
            for (k1, x1), (k2, x2) in zip(self.coeffs, reversed(self.coeffs))
        )

    @property
    def stages(self) -> int:
        """Force evaluations per step once kicks are merged across steps."""
        n_kicks = sum(1 for k, _ in self.coeffs if k == KICK)
        if self.coeffs[0][0] == KICK and self.coeffs[-1][0] == KICK:
            return n_kicks - 1
        return n_kicks

    def flows(self) -> Iterator[tuple[str, float]]:
        """Yield ``(label, fraction)`` in the order the flows act."""
        return reversed(self.coeffs)

    def swapped(self) -> "SplittingScheme":
        """Scheme obtained by exchanging the roles of drifts and kicks."""
        swap = {DRIFT: KICK, KICK: DRIFT}
        return SplittingScheme(
            tuple((swap[k], x) for k, x in self.coeffs), name=f"swapped({self.name})"
        )

    def __str__(self):
        body = ", ".join(f"{k}:{x:.12g}" for k, x in self.coeffs)
        return f"{self.name}({body})"


def lie_trotter() -> SplittingScheme:
    """First-order kick-after-drift composition ``phi^B_h o phi^A_h``."""
    return SplittingScheme(((KICK, 1.0), (DRIFT, 1.0)), name="lie_trotter")


def velocity_verlet() -> SplittingScheme:
    return SplittingScheme(((KICK, 0.5), (DRIFT, 1.0), (KICK, 0.5)), name="velocity_verlet")


def position_verlet() -> SplittingScheme:
    return SplittingScheme(((DRIFT, 0.5), (KICK, 1.0), (DRIFT, 0.5)), name="position_verlet")


def two_stage(b: float) -> SplittingScheme:
    """Palindromic two-stage family ``(b, 1/2, 1 - 2b, 1/2, b)``."""
    return SplittingScheme(
        ((KICK, b), (DRIFT, 0.5), (KICK, 1.0 - 2.0 * b), (DRIFT, 0.5), (KICK, b)),
        name=f"two_stage(b={b:.12g})",
    )


def three_stage(a: float, b: float) -> SplittingScheme:
    """Palindromic three-stage family ``(b, a, 1/2-b, 1-2a, 1/2-b, a, b)``."""
    return SplittingScheme(
        (
            (KICK, b),
            (DRIFT, a),
            (KICK, 0.5 - b),
            (DRIFT, 1.0 - 2.0 * a),
            (KICK, 0.5 - b),
            (DRIFT, a),
            (KICK, b),
        ),
        name=f"three_stage(a={a:.12g}, b={b:.12g})",
    )


BLANES_TWO_STAGE_B = (3.0 - math.sqrt(3.0)) / 6.0
BLANES_THREE_STAGE_A = 0.29619504261126
BLANES_THREE_STAGE_B = 0.11888010966548


def blanes_two_stage() -> SplittingScheme:
    s = two_stage(BLANES_TWO_STAGE_B)
    return SplittingScheme(s.coeffs, name="blanes_two_stage")


def blanes_three_stage() -> SplittingScheme:
    s = three_stage(BLANES_THREE_STAGE_A, BLANES_THREE_STAGE_B)
    return SplittingScheme(s.coeffs, name="blanes_three_stage")


def verlet_concat(n: int) -> SplittingScheme:
    """``n`` velocity Verlet steps of length ``h/n`` fused into one step."""
    if int(n) != n or n < 1:
        raise ValueError(f"verlet_concat needs an integer N >= 1, got {n!r}")
    n = int(n)
    coeffs: list[tuple[str, float]] = []
    for _ in range(n):
        coeffs += [(KICK, 0.5 / n), (DRIFT, 1.0 / n), (KICK, 0.5 / n)]
    return SplittingScheme(tuple(coeffs), name=f"verlet_concat({n})")


_NAMED = {
    "lie_trotter": lie_trotter,
    "velocity_verlet": velocity_verlet,
    "position_verlet": position_verlet,
    "two_stage": two_stage,
    "three_stage": three_stage,
    "blanes_two_stage": blanes_two_stage,
    "blanes_three_stage": blanes_three_stage,
    "verlet_concat": verlet_concat,
}


def named_scheme(kind: str, *params: float) -> SplittingScheme:
    """Look up a scheme constructor by name.

    >>> named_scheme("two_stage", 0.25).stages
    2
    """
    try:
        ctor = _NAMED[kind]
    except KeyError:
        raise ValueError(
            f"unknown scheme {kind!r}; expected one of {sorted(_NAMED)}"
        ) from None
    return ctor(*params)


def scheme_from_spec(spec: str | Sequence) -> SplittingScheme:
    """Parse ``"two_stage(0.2)"``-style strings or ``[kind, *params]`` lists."""
    if isinstance(spec, str):
        spec = spec.strip()
        if "(" in spec:
            kind, rest = spec.split("(", 1)
            params = [float(x) for x in rest.rstrip(")").split(",") if x.strip()]
        else:
            kind, params = spec, []
        return named_scheme(kind.strip(), *params)
    kind, *params = spec
    return named_scheme(kind, *params)
