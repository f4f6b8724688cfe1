"""Built-in test systems used by the acceptance suite and the CLI."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .signals import SampledSignal
from .systems import (
    LtiStateSpace,
    NegFeedbackWithGain,
    ScalarGain,
    SystemOperator,
    identity,
    static_map,
)

__all__ = ["AcausalSmoother", "SuiteRegistry", "default_registry", "tf"]


def tf(num, den) -> LtiStateSpace:
    return LtiStateSpace.from_tf(num, den)


class AcausalSmoother(SystemOperator):
    """Centered moving average over ``+-half_width`` seconds.

    Looks into the future, so it is *not* causal; kept as a negative control
    for checks that rely on causality.
    """

    causal = False

    def __init__(self, half_width: float = 0.25):
        self.half_width = float(half_width)
        self.input_dim = self.output_dim = 1

    def apply(self, u: SampledSignal) -> SampledSignal:
        self.check_input(u)
        m = max(1, int(round(self.half_width / u.dt)))
        kernel = np.ones(2 * m + 1) / (2 * m + 1)
        return u.with_values(np.convolve(u.values[0], kernel, mode="same")[np.newaxis, :])

    def __repr__(self):
        return f"AcausalSmoother(half_width={self.half_width})"


def _passive() -> dict[str, SystemOperator]:
    return {
        "identity": identity(),
        "gain 0.5": ScalarGain(0.5),
        "gain 2": ScalarGain(2.0),
        "1/(s+1)": tf([1.0], [1.0, 1.0]),
        "(s+2)/(s+1)": tf([1.0, 2.0], [1.0, 1.0]),
        "saturation": static_map("saturation", level=1.0),
        "cubic": static_map("cubic", a=1.0, b=0.5),
    }


def _nonpassive() -> dict[str, SystemOperator]:
    return {"gain -1": ScalarGain(-1.0), "(s-1)/(s+2)": tf([1.0, -1.0], [1.0, 2.0])}


def _oracle() -> dict[str, LtiStateSpace]:
    return {
        "1/(s+1)": tf([1.0], [1.0, 1.0]),
        "(s+2)/(s+1)": tf([1.0, 2.0], [1.0, 1.0]),
        "(s-1)/(s+2)": tf([1.0, -1.0], [1.0, 2.0]),
        "5": tf([5.0], [1.0]),
        "1/(s+1e-3)": tf([1.0], [1.0, 1e-3]),
    }


@dataclass
class SuiteRegistry:
    """Systems each suite check runs over; fields can be replaced to plant controls.

    ``strict_sigma1`` maps names to the strictly passive loop blocks of the
    small-gain-type bound; ``output_strict_sigma1`` maps names to
    ``(operator, index)`` pairs where ``index`` is the known output index;
    ``safe_sigma1`` maps names to ``(operator, gain bound, theorem tag)``.
    """

    passive: dict = field(default_factory=_passive)
    nonpassive: dict = field(default_factory=_nonpassive)
    oracle: dict = field(default_factory=_oracle)
    strict_sigma1: dict = field(default_factory=lambda: {"gain 1": ScalarGain(1.0),
                                                          "gain 2": ScalarGain(2.0)})
    output_strict_sigma1: dict = field(default_factory=lambda: {"1/(s+1)": (tf([1.0], [1.0, 1.0]), 1.0)})
    safe_sigma1: dict = field(default_factory=lambda: {"identity": (identity(), 4.0, "thm2"),
                                                        "1/(s+1)": (tf([1.0], [1.0, 1.0]), 1.0, "thm4")})
    destabilizable: dict = field(default_factory=lambda: {"(s-1)/(s+2)": tf([1.0, -1.0], [1.0, 2.0])})
    acausal: SystemOperator = field(default_factory=AcausalSmoother)

    def causal(self) -> dict[str, SystemOperator]:
        ops = dict(self.passive)
        ops.update(self.nonpassive)
        ops["negfb(1/(s+1), 0.5)"] = NegFeedbackWithGain(tf([1.0], [1.0, 1.0]), 0.5)
        ops["negfb(saturation, 0.5)"] = NegFeedbackWithGain(static_map("saturation"), 0.5)
        return ops


def default_registry() -> SuiteRegistry:
    return SuiteRegistry()
