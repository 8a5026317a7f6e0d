"""Pairwise update rules applied at edge clock ticks.

Three families: the plain pairwise mean, convex blends that keep both
endpoints inside the input interval, and the amplified cut transfer that
the periodic scheme fires on the designated cut edge.  All rules see only
the two endpoint values of the ticking edge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

from .graph import KIND_CUT, KIND_INTRA, PartitionedGraph

__all__ = [
    "RuleCase",
    "RuleDescriptor",
    "parse_rule",
    "vanilla_update",
    "convex_update",
    "nonconvex_cut_update",
    "resolve_gamma",
    "compute_period",
    "algA_dispatch",
]

GAMMA_MODES = ("balanced", "n1", "explicit")

RULE_KINDS = ("vanilla", "convex", "algA")


class RuleCase(IntEnum):
    """Which elementary update an event actually applied."""

    NOOP = 0
    VANILLA = 1
    CONVEX = 2
    NONCONVEX = 3


def _fmt(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


@dataclass(frozen=True)
class RuleDescriptor:
    """Which update rule governs each clock tick.

    kind "vanilla": every tick replaces both endpoints by their mean.
    kind "convex": every tick applies the alpha blend (alpha in [0, 1]).
    kind "algA": intra-block ticks average, non-designated cross ticks are
    no-ops, and every ``period``-th tick of the designated cut edge fires
    the amplified transfer with coefficient gamma.  ``period`` may be left
    unset and resolved later from block averaging-time estimates via
    :func:`compute_period` with constant ``c_const``.

    gamma_mode "balanced" uses n1*n2/n, which zeroes the block-mean
    imbalance exactly; "n1" uses the block-one size (overshoots into a
    mean swap when the blocks have equal size); "explicit" uses
    ``gamma_value``.
    """

    kind: str
    alpha: float | None = None
    period: int | None = None
    gamma_mode: str = "balanced"
    gamma_value: float | None = None
    c_const: float = 4.0

    def __post_init__(self) -> None:
        if self.kind not in RULE_KINDS:
            raise ValueError(f"unknown rule kind {self.kind!r}")
        if self.kind == "convex":
            if self.alpha is None or not (0.0 <= self.alpha <= 1.0):
                raise ValueError("convex rule requires alpha in [0, 1]")
        elif self.alpha is not None:
            raise ValueError("alpha is only meaningful for the convex rule")
        if self.kind == "algA":
            if self.period is not None and (
                not isinstance(self.period, int) or self.period < 1
            ):
                raise ValueError("period must be a positive integer")
            if self.gamma_mode not in GAMMA_MODES:
                raise ValueError(f"unknown gamma mode {self.gamma_mode!r}")
            if self.gamma_mode == "explicit":
                if self.gamma_value is None or self.gamma_value <= 0:
                    raise ValueError("explicit gamma must be positive")
            elif self.gamma_value is not None:
                raise ValueError("gamma_value requires gamma_mode='explicit'")
            if not self.c_const > 0:
                raise ValueError("c_const must be positive")
        elif self.period is not None:
            raise ValueError("period is only meaningful for the algA rule")

    def to_text(self) -> str:
        """Short text form used by CLI flags and trace metadata."""
        if self.kind == "vanilla":
            return "vanilla"
        if self.kind == "convex":
            return f"convex:a={_fmt(self.alpha)}"
        parts = []
        if self.period is not None:
            parts.append(f"P={self.period}")
        gamma = (
            _fmt(self.gamma_value)
            if self.gamma_mode == "explicit"
            else self.gamma_mode
        )
        parts.append(f"gamma={gamma}")
        parts.append(f"C={_fmt(self.c_const)}")
        return "algA:" + ",".join(parts)


def parse_rule(text: str) -> RuleDescriptor:
    """Parse the short text form, e.g. ``convex:a=0.75`` or
    ``algA:P=20,gamma=balanced,C=4``."""
    name, _, args = text.strip().partition(":")
    fields: dict[str, str] = {}
    if args:
        for item in args.split(","):
            key, eq, val = item.partition("=")
            if not eq or not val:
                raise ValueError(f"malformed rule option {item!r}")
            fields[key.strip()] = val.strip()
    try:
        if name == "vanilla":
            if fields:
                raise ValueError("vanilla takes no options")
            return RuleDescriptor("vanilla")
        if name == "convex":
            unknown = set(fields) - {"a"}
            if unknown or "a" not in fields:
                raise ValueError("convex requires exactly the option a=<alpha>")
            return RuleDescriptor("convex", alpha=float(fields["a"]))
        if name == "algA":
            unknown = set(fields) - {"P", "gamma", "C"}
            if unknown:
                raise ValueError(f"unknown algA options {sorted(unknown)}")
            period = int(fields["P"]) if "P" in fields else None
            c_const = float(fields["C"]) if "C" in fields else 4.0
            gamma = fields.get("gamma", "balanced")
            if gamma in ("balanced", "n1"):
                return RuleDescriptor(
                    "algA", period=period, gamma_mode=gamma, c_const=c_const
                )
            return RuleDescriptor(
                "algA",
                period=period,
                gamma_mode="explicit",
                gamma_value=float(gamma),
                c_const=c_const,
            )
    except ValueError as exc:
        raise ValueError(f"bad rule text {text!r}: {exc}") from exc
    raise ValueError(f"unknown rule {name!r}")


def vanilla_update(xi: float, xj: float) -> tuple[float, float]:
    """Replace both values by their arithmetic mean."""
    h = 0.5 * (xi + xj)
    return h, h


def convex_update(xi: float, xj: float, alpha: float) -> tuple[float, float]:
    """Symmetric convex blend; outputs stay inside [min(xi,xj), max(xi,xj)]."""
    beta = 1.0 - alpha
    return alpha * xi + beta * xj, alpha * xj + beta * xi


def nonconvex_cut_update(
    x_small: float, x_large: float, gamma: float
) -> tuple[float, float]:
    """Antisymmetric transfer of gamma times the difference across the cut.

    The same transfer amount is added to one endpoint and subtracted from
    the other, so the pair sum is preserved up to one rounding each side.
    """
    t = gamma * (x_large - x_small)
    return x_small + t, x_large - t


def resolve_gamma(
    graph: PartitionedGraph, gamma_mode: str, gamma_value: float | None = None
) -> float:
    """Concrete cut coefficient for a graph.

    "n1" yields the block-one size; "balanced" yields n1*n2/n, the value
    that makes one cut transfer equalize both block means exactly when each
    block sits at its mean; "explicit" passes gamma_value through.
    """
    if gamma_mode == "n1":
        return float(graph.n1)
    if gamma_mode == "balanced":
        return graph.n1 * graph.n2 / graph.n
    if gamma_mode == "explicit":
        if gamma_value is None or gamma_value <= 0:
            raise ValueError("explicit gamma must be positive")
        return float(gamma_value)
    raise ValueError(f"unknown gamma mode {gamma_mode!r}")


def compute_period(t_van1: float, t_van2: float, n: float, c_const: float) -> int:
    """Firing period: ceil(C * (T1 + T2) * ln n), floored at 1."""
    if t_van1 < 0 or t_van2 < 0:
        raise ValueError("averaging times must be nonnegative")
    if n < 2:
        raise ValueError("need at least two vertices")
    if not c_const > 0:
        raise ValueError("c_const must be positive")
    return max(1, math.ceil(c_const * (t_van1 + t_van2) * math.log(n)))


def algA_dispatch(edge_kind: int, cut_ticks: int, period: int) -> RuleCase:
    """Case analysis for the periodic scheme.

    ``edge_kind`` is a flat-edge kind code (intra-block, non-designated
    cross, or designated cut).  ``cut_ticks`` counts ticks of the
    designated cut edge, the current tick included, starting at 1; the
    transfer fires on ticks congruent to -1 mod period, so period 1 fires
    every cut tick.
    """
    if edge_kind == KIND_INTRA:
        return RuleCase.VANILLA
    if edge_kind != KIND_CUT:
        return RuleCase.NOOP
    if cut_ticks % period == period - 1:
        return RuleCase.NONCONVEX
    return RuleCase.NOOP
