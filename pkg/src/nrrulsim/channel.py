"""Gilbert-Elliot two-state Markov error process.

Drives per-message success/failure of PUSCH/PDSCH receptions.  The chain
advances once per sampled transmission (event-driven): state does not decay
during idle time between a terminal's transmissions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GOOD = 0
BAD = 1


@dataclass(frozen=True)
class GilbertElliotParams:
    """Two-state Markov channel parameters.

    g: probability of correct reception in the good state
    b: probability of correct reception in the bad state
    u: transition probability good -> bad
    v: transition probability bad -> good
    """

    g: float = 1.0
    b: float = 0.0
    u: float = 0.0
    v: float = 0.5

    def __post_init__(self) -> None:
        for name in ("g", "b", "u", "v"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name}={value} outside [0, 1]")
        if self.g < self.b:
            raise ValueError("expected g >= b (good state at least as reliable)")
        if self.u + self.v <= 0.0:
            raise ValueError("u + v must be positive for a steady state to exist")


def steady_state(params: GilbertElliotParams) -> tuple[float, float]:
    """Stationary occupancy (pi_good, pi_bad) of the two-state chain.

    The bad-state share is taken as the complement so the pair sums to
    exactly one in floating point.
    """
    pi_good = params.v / (params.u + params.v)
    return pi_good, 1.0 - pi_good


def error_rate(params: GilbertElliotParams) -> float:
    """Steady-state reception error rate (1-g)*pi_G + (1-b)*pi_B."""
    pi_g, pi_b = steady_state(params)
    return (1.0 - params.g) * pi_g + (1.0 - params.b) * pi_b


def calibrate(
    target_pe: float, g: float = 1.0, b: float = 0.0, v: float = 0.5
) -> GilbertElliotParams:
    """Solve for u so that the steady-state error rate equals target_pe.

    From pe = (1-g)*v/(u+v) + (1-b)*u/(u+v):
        u = v * (pe - (1-g)) / ((1-b) - pe)
    Only targets inside the achievable range [(1-g), (1-b)) can be hit.
    """
    if not 0.0 < v <= 1.0:
        raise ValueError("v must be in (0, 1]")
    lo, hi = 1.0 - g, 1.0 - b
    if not lo <= target_pe < hi:
        raise ValueError(
            f"target error rate {target_pe} outside achievable range [{lo}, {hi})"
        )
    u = v * (target_pe - lo) / (hi - target_pe)
    if u > 1.0:
        # u is itself a probability; at fixed v the bad state cannot be
        # occupied more than 1/(1+v) of the time
        raise ValueError(
            f"target error rate {target_pe} needs u={u:.4f} > 1 at v={v}; "
            "raise v or widen g-b"
        )
    return GilbertElliotParams(g=g, b=b, u=u, v=v)


class GilbertElliotChannel:
    """Stateful channel instance owned by a single replication.

    Each sample() consumes exactly two draws from the stream, in a fixed
    order: the success draw first, the state-transition draw second.  This
    keeps the consumed stream length independent of outcomes, so simulations
    with a shared seed stay aligned.
    """

    def __init__(
        self,
        params: GilbertElliotParams,
        rng: np.random.Generator,
        initial_state: int | None = None,
    ):
        self.params = params
        self.rng = rng
        if initial_state is None:
            # draw the initial state from the stationary distribution
            pi_g, _ = steady_state(params)
            initial_state = GOOD if rng.random() < pi_g else BAD
        self.state = initial_state

    def sample(self) -> bool:
        """One reception attempt: returns True on success, then steps the chain."""
        p_ok = self.params.g if self.state == GOOD else self.params.b
        success = self.rng.random() < p_ok
        flip = self.rng.random()
        if self.state == GOOD:
            if flip < self.params.u:
                self.state = BAD
        else:
            if flip < self.params.v:
                self.state = GOOD
        return success


def sample(
    state: int, params: GilbertElliotParams, rng: np.random.Generator
) -> tuple[bool, int]:
    """Functional form of one channel step: (success, next_state)."""
    p_ok = params.g if state == GOOD else params.b
    success = rng.random() < p_ok
    flip = rng.random()
    if state == GOOD:
        next_state = BAD if flip < params.u else GOOD
    else:
        next_state = GOOD if flip < params.v else BAD
    return success, next_state
