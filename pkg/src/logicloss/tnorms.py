"""T-norm semantics: closed-form principal t-norms and additive generators.

Two ways to interpret connectives:

* table semantics -- Gödel, Łukasiewicz and Product with their textbook
  closed forms for every connective;
* generator semantics -- a Schweizer-Sklar or Frank additive generator ``g``
  with parameter ``lam``; the t-norm is ``T(x, y) = g⁻¹(min{g(0⁺), g(x) + g(y)})``
  and the other connectives follow from ``g`` as well.

``g(0)`` of a strict generator is ``math.inf``; sums saturate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

from . import autodiff as ad

__all__ = [
    "Semantics", "Generator", "GODEL", "LUKASIEWICZ", "PRODUCT",
    "schweizer_sklar", "frank", "semantics_from_name",
    "DomainError", "ArityError", "UnsupportedConnective",
    "generator_value", "generator_pseudo_inverse", "eval_connective", "named_tnorm",
    "CONNECTIVES", "EPS",
]

EPS = 1e-12

CONNECTIVES = {
    "strong_conj": 2, "weak_conj": 2, "tconorm": 2, "weak_disj": 2,
    "residual_imply": 2, "material_imply": 2, "biresiduum": 2,
    "residual_neg": 1, "strong_neg": 1,
}


class DomainError(ValueError):
    pass


class ArityError(TypeError):
    pass


class UnsupportedConnective(ValueError):
    pass


@dataclass(frozen=True)
class Generator:
    """Additive generator ``g`` of an Archimedean t-norm.

    ``family`` is ``"ss"`` (Schweizer-Sklar) or ``"frank"``; the principal
    strict/nilpotent cases are ``ss`` with ``lam`` 0 / 1.
    """

    family: str
    lam: float
    eps: float = EPS

    def __post_init__(self):
        if self.family == "ss":
            if not math.isfinite(self.lam):
                raise DomainError("Schweizer-Sklar parameter must be finite")
        elif self.family == "frank":
            if not (self.lam > 0):
                raise UnsupportedConnective("Frank lam=0 is the Gödel t-norm, which has no additive generator")
        else:
            raise ValueError(f"unknown generator family {self.family!r}")

    @cached_property
    def kind(self) -> str:
        """``neglog`` (g = -log x), ``linear`` (g = 1 - x), ``ss`` or ``frank``."""
        if (self.family == "ss" and self.lam == 0) or (self.family == "frank" and self.lam == 1):
            return "neglog"
        if (self.family == "ss" and self.lam == 1) or (self.family == "frank" and math.isinf(self.lam)):
            return "linear"
        return self.family

    @cached_property
    def g0(self) -> float:
        """g(0⁺): +inf for strict generators, finite for nilpotent ones."""
        kind = self.kind
        if kind == "linear":
            return 1.0
        if kind == "ss" and self.lam > 0:
            return 1.0 / self.lam
        return math.inf

    @cached_property
    def strict(self) -> bool:
        return math.isinf(self.g0)

    @cached_property
    def log_type(self) -> bool:
        return self.kind in ("neglog", "frank")

    @cached_property
    def floored(self) -> bool:
        """Whether inputs are floored at ``eps`` (generators that blow up at 0)."""
        return self.log_type or (self.kind == "ss" and self.lam < 0)

    def __call__(self, x: float) -> float:
        if not (0.0 <= x <= 1.0):
            raise DomainError(f"truth degree {x} outside [0, 1]")
        if x == 0.0:
            return self.g0
        kind = self.kind
        if kind == "linear":
            return 1.0 - x
        if self.floored:
            x = max(x, self.eps)
        if kind == "neglog":
            return -math.log(x)
        if kind == "ss":
            return (1.0 - x**self.lam) / self.lam
        # frank: log((lam - 1) / (lam**x - 1)), written to stay accurate near 0 and 1
        ln_lam = math.log(self.lam)
        return math.log(abs(self.lam - 1.0)) - math.log(abs(math.expm1(x * ln_lam)))

    def inverse(self, y: float) -> float:
        """Pseudo-inverse: g⁻¹(y), with y ≥ g(0⁺) mapped to 0."""
        if math.isnan(y) or y < 0.0:
            raise DomainError(f"generator value {y} must be non-negative")
        if y >= self.g0:
            return 0.0
        kind = self.kind
        if kind == "linear":
            x = 1.0 - y
        elif kind == "neglog":
            x = math.exp(-y)
        elif kind == "ss":
            base = 1.0 - self.lam * y
            x = base ** (1.0 / self.lam) if base > 0 else 0.0
        else:
            x = math.log1p((self.lam - 1.0) * math.exp(-y)) / math.log(self.lam)
        return min(1.0, max(0.0, x))

    def expr(self, p: ad.Expr) -> ad.Expr:
        """g applied to a probability-valued expression, as a graph.

        Generators that blow up at 0 floor their argument at ``eps`` so the loss stays
        finite; the floor has zero gradient below it.
        """
        kind = self.kind
        if kind == "linear":
            return 1.0 - p
        if self.floored:
            p = ad.maximum(p, self.eps)
        if kind == "ss":
            return (1.0 - p ** self.lam) / self.lam
        if kind == "neglog":
            return -ad.log(p)
        lam = self.lam
        # frank: log|lam - 1| - log|lam**p - 1|
        inner = ad.exp(p * math.log(lam)) - 1.0
        if lam < 1:
            inner = -inner
        return math.log(abs(lam - 1.0)) - ad.log(inner)


@dataclass(frozen=True)
class Semantics:
    """Either a principal table t-norm or a generator family with ``lam``."""

    kind: str  # godel | lukasiewicz | product | ss | frank
    lam: float | None = None

    def __post_init__(self):
        if self.kind in ("godel", "lukasiewicz", "product"):
            if self.lam is not None:
                raise ValueError(f"{self.kind} takes no parameter")
        elif self.kind == "ss":
            if self.lam is None or not math.isfinite(self.lam):
                raise DomainError("Schweizer-Sklar needs a finite lambda")
        elif self.kind == "frank":
            if self.lam is None or math.isnan(self.lam) or self.lam < 0:
                raise DomainError("Frank needs lambda in [0, +inf]")
        else:
            raise ValueError(f"unknown semantics {self.kind!r}")

    @cached_property
    def table(self) -> str | None:
        """Name of the closed-form table these semantics use, if any."""
        if self.kind in ("godel", "lukasiewicz", "product"):
            return self.kind
        if self.kind == "frank" and self.lam == 0:
            return "godel"
        return None

    @property
    def has_generator(self) -> bool:
        return not (self.kind == "godel" or (self.kind == "frank" and self.lam == 0))

    def generator(self) -> Generator:
        return self._generator

    @cached_property
    def _generator(self) -> Generator:
        if self.kind == "lukasiewicz":
            return Generator("ss", 1.0)
        if self.kind == "product":
            return Generator("ss", 0.0)
        if not self.has_generator:
            raise UnsupportedConnective(f"{self.label} is not Archimedean and has no additive generator")
        return Generator(self.kind, float(self.lam))

    @property
    def label(self) -> str:
        return self.kind if self.lam is None else f"{self.kind}(lambda={self.lam:g})"


GODEL = Semantics("godel")
LUKASIEWICZ = Semantics("lukasiewicz")
PRODUCT = Semantics("product")


def schweizer_sklar(lam: float) -> Semantics:
    return Semantics("ss", float(lam))


def frank(lam: float) -> Semantics:
    return Semantics("frank", float(lam))


def semantics_from_name(name: str, lam: float | None = None) -> Semantics:
    """Map CLI names (godel, lukasiewicz, product, ss, frank) to semantics."""
    name = name.lower()
    if name in ("ss", "frank"):
        if lam is None:
            raise ValueError(f"--semantics {name} requires --lambda")
        return Semantics(name, float(lam))
    return Semantics(name)


# --------------------------------------------------------------------- operations


def _check(x: float) -> float:
    if not (0.0 <= x <= 1.0):
        raise DomainError(f"truth degree {x} outside [0, 1]")
    return float(x)


def generator_value(sem: Semantics | Generator, x: float) -> float:
    gen = sem if isinstance(sem, Generator) else sem.generator()
    return gen(x)


def generator_pseudo_inverse(sem: Semantics | Generator, y: float) -> float:
    gen = sem if isinstance(sem, Generator) else sem.generator()
    return gen.inverse(y)


def named_tnorm(kind: str, x: float, y: float) -> float:
    x, y = _check(x), _check(y)
    if kind == "godel":
        return min(x, y)
    if kind == "lukasiewicz":
        return max(0.0, x + y - 1.0)
    if kind == "product":
        return x * y
    raise ValueError(f"unknown principal t-norm {kind!r}")


def _table(kind: str, conn: str, x: float, y: float | None) -> float:
    if conn == "strong_conj":
        return named_tnorm(kind, x, y)
    if kind == "godel":
        if conn == "residual_imply":
            return 1.0 if x <= y else y
        if conn == "biresiduum":
            # (x => y) ⊗ (y => x); equal arguments give 1
            return 1.0 if x == y else min(x, y)
        if conn == "residual_neg":
            return 1.0 if x == 0 else 0.0
        if conn == "tconorm":
            return max(x, y)
        if conn == "material_imply":
            return max(1.0 - x, y)
    elif kind == "lukasiewicz":
        if conn == "residual_imply":
            return min(1.0, 1.0 - x + y)
        if conn == "biresiduum":
            return 1.0 - abs(x - y)
        if conn == "residual_neg":
            return 1.0 - x
        if conn == "tconorm":
            return min(1.0, x + y)
        if conn == "material_imply":
            return min(1.0, 1.0 - x + y)
    elif kind == "product":
        if conn == "residual_imply":
            return 1.0 if x <= y else y / x
        if conn == "biresiduum":
            return 1.0 if x == y else min(x, y) / max(x, y)
        if conn == "residual_neg":
            return 1.0 if x == 0 else 0.0
        if conn == "tconorm":
            return x + y - x * y
        if conn == "material_imply":
            return 1.0 - x + x * y
    raise UnsupportedConnective(f"{conn} under {kind}")  # pragma: no cover


def _gen_conj(g: Generator, gx: float, gy: float) -> float:
    return g.inverse(min(g.g0, gx + gy))


def _gen_imply(g: Generator, gx: float, gy: float) -> float:
    if math.isinf(gx):
        return 1.0
    return g.inverse(max(0.0, gy - gx))


def _generated(g: Generator, conn: str, x: float, y: float | None) -> float:
    if conn == "strong_conj":
        # 1 is the exact identity; the round trip through g can miss it
        if x == 1.0 or y == 1.0:
            return min(x, y)
        return _gen_conj(g, g(x), g(y))
    if conn == "residual_imply":
        return _gen_imply(g, g(x), g(y))
    if conn == "biresiduum":
        gx, gy = g(x), g(y)
        if gx == gy:
            return 1.0
        return g.inverse(abs(gx - gy))
    if conn == "residual_neg":
        return _gen_imply(g, g(x), g(0.0))
    if conn == "tconorm":
        return 1.0 - _gen_conj(g, g(1.0 - x), g(1.0 - y))
    if conn == "material_imply":
        return 1.0 - _gen_conj(g, g(x), g(1.0 - y))
    raise UnsupportedConnective(conn)  # pragma: no cover


def eval_connective(sem: Semantics, conn: str, x: float, y: float | None = None) -> float:
    """Truth degree of ``conn`` applied to ``x`` (and ``y``) under ``sem``."""
    if conn not in CONNECTIVES:
        raise UnsupportedConnective(f"unknown connective {conn!r}")
    arity = CONNECTIVES[conn]
    if (arity == 2) != (y is not None):
        raise ArityError(f"{conn} takes {arity} operand(s)")
    x = _check(x)
    if y is not None:
        y = _check(y)
    if conn == "weak_conj":
        return min(x, y)
    if conn == "weak_disj":
        return max(x, y)
    if conn == "strong_neg":
        return 1.0 - x
    table = sem.table
    if table is not None:
        return _table(table, conn, x, y)
    return min(1.0, max(0.0, _generated(sem.generator(), conn, x, y)))
