"""Summary table and inconclusive-aware error rates.

Counts follow the usual 2 x 3 layout::

                      Identification  Inconclusive  Exclusion
    same source             a              b            c
    different source        d              e            f

All rates are exact :class:`fractions.Fraction` values; a rate whose
denominator is zero is ``None`` (undefined) rather than 0 or NaN.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational, Real

from .study_data import Conclusion, GroundTruth, StudyDataset

__all__ = [
    "RateOption",
    "ContingencyTable",
    "RateSet",
    "ConclusiveSummary",
    "DomainError",
    "build_contingency",
    "summarize_conclusive",
    "rates",
    "all_rates",
    "failure_rate",
    "failure_rate_from_counts",
    "format_rate",
    "rate_rows",
]


class DomainError(ValueError):
    pass


class RateOption(str, enum.Enum):
    IGNORED = "Ignored"
    CORRECT = "Correct"
    HALF_CREDIT = "HalfCredit"
    INCORRECT = "Incorrect"


@dataclass(frozen=True)
class ContingencyTable:
    a: int = 0
    b: int = 0
    c: int = 0
    d: int = 0
    e: int = 0
    f: int = 0

    def __post_init__(self):
        for name in "abcdef":
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise ValueError(f"cell {name} must be a non-negative integer, got {v!r}")

    @property
    def same_source_total(self) -> int:
        return self.a + self.b + self.c

    @property
    def different_source_total(self) -> int:
        return self.d + self.e + self.f

    def scaled(self, k: int) -> "ContingencyTable":
        return ContingencyTable(*(k * getattr(self, n) for n in "abcdef"))

    def as_dict(self) -> dict[str, int]:
        return {n: getattr(self, n) for n in "abcdef"}


@dataclass(frozen=True)
class RateSet:
    option: RateOption
    fpr: Fraction | None
    fnr: Fraction | None

    def rate(self, truth: GroundTruth) -> Fraction | None:
        """False negative rate for same-source items, false positive otherwise."""
        return self.fnr if truth is GroundTruth.SAME_SOURCE else self.fpr


def _ratio(num, den) -> Fraction | None:
    return None if den == 0 else Fraction(num) / Fraction(den)


def build_contingency(dataset: StudyDataset) -> ContingencyTable:
    """Tally responses into the six cells.

    ``dataset`` must already have its unsuitable responses pooled or
    removed (see :func:`bbr.study_data.apply_policy`).
    """
    counts = dataset.category_counts()
    ss, ds = GroundTruth.SAME_SOURCE, GroundTruth.DIFFERENT_SOURCE
    if counts[ss, Conclusion.UNSUITABLE] or counts[ds, Conclusion.UNSUITABLE]:
        raise ValueError("dataset still contains unsuitable responses; apply a policy first")
    return ContingencyTable(
        a=counts[ss, Conclusion.IDENTIFICATION],
        b=counts[ss, Conclusion.INCONCLUSIVE],
        c=counts[ss, Conclusion.EXCLUSION],
        d=counts[ds, Conclusion.IDENTIFICATION],
        e=counts[ds, Conclusion.INCONCLUSIVE],
        f=counts[ds, Conclusion.EXCLUSION],
    )


@dataclass(frozen=True)
class ConclusiveSummary:
    """Conclusive vs not-conclusive counts by ground truth."""

    ss_conclusive: int
    ss_not_conclusive: int
    ds_conclusive: int
    ds_not_conclusive: int

    @property
    def p_same_given_not_conclusive(self) -> Fraction | None:
        return _ratio(self.ss_not_conclusive, self.ss_not_conclusive + self.ds_not_conclusive)

    @property
    def not_conclusive_risk_ratio(self) -> Fraction | None:
        """How many times more likely a non-conclusive response is on a
        same-source item than on a different-source item."""
        p_ss = _ratio(self.ss_not_conclusive, self.ss_conclusive + self.ss_not_conclusive)
        p_ds = _ratio(self.ds_not_conclusive, self.ds_conclusive + self.ds_not_conclusive)
        if p_ss is None or p_ds is None or p_ds == 0:
            return None
        return p_ss / p_ds


def summarize_conclusive(dataset: StudyDataset) -> ConclusiveSummary:
    counts = dataset.category_counts()

    def split(truth):
        conc = counts[truth, Conclusion.IDENTIFICATION] + counts[truth, Conclusion.EXCLUSION]
        rest = counts[truth, Conclusion.INCONCLUSIVE] + counts[truth, Conclusion.UNSUITABLE]
        return conc, rest

    ssc, ssn = split(GroundTruth.SAME_SOURCE)
    dsc, dsn = split(GroundTruth.DIFFERENT_SOURCE)
    return ConclusiveSummary(ssc, ssn, dsc, dsn)


def rates(table: ContingencyTable, option: RateOption | str) -> RateSet:
    option = RateOption(option)
    a, b, c, d, e, f = (table.a, table.b, table.c, table.d, table.e, table.f)
    if option is RateOption.IGNORED:
        fpr, fnr = _ratio(d, d + f), _ratio(c, a + c)
    elif option is RateOption.CORRECT:
        fpr, fnr = _ratio(d, d + e + f), _ratio(c, a + b + c)
    elif option is RateOption.HALF_CREDIT:
        half = Fraction(1, 2)
        fpr, fnr = _ratio(d + half * e, d + e + f), _ratio(c + half * b, a + b + c)
    else:
        fpr, fnr = _ratio(d + e, d + e + f), _ratio(c + b, a + b + c)
    return RateSet(option, fpr, fnr)


def all_rates(table: ContingencyTable) -> dict[RateOption, RateSet]:
    return {opt: rates(table, opt) for opt in RateOption}


def _check_unit(name, x):
    if not 0 <= x <= 1:
        raise DomainError(f"{name} must lie in [0, 1], got {x}")


def failure_rate(inc_correct, inc_incorrect, ratio):
    """Error rate with a ``ratio`` share of the inconclusives counted as errors.

    Linear interpolation between the inconclusives-correct and
    inconclusives-incorrect rates.  Exact when all inputs are rationals.
    """
    for name, x in (("inc_correct", inc_correct), ("inc_incorrect", inc_incorrect), ("ratio", ratio)):
        if x is None:
            raise DomainError(f"{name} is undefined")
        _check_unit(name, x)
    if inc_correct > inc_incorrect:
        raise DomainError(
            f"inc_correct ({inc_correct}) exceeds inc_incorrect ({inc_incorrect})"
        )
    return inc_correct + ratio * (inc_incorrect - inc_correct)


def failure_rate_from_counts(errors: int, inconclusives: int, total: int, ratio):
    """``(errors + ratio * inconclusives) / total``; e.g. ``(c + r b)/(a+b+c)``."""
    if total <= 0:
        raise DomainError("total must be positive")
    if errors < 0 or inconclusives < 0 or errors + inconclusives > total:
        raise DomainError("counts must satisfy 0 <= errors + inconclusives <= total")
    _check_unit("ratio", ratio)
    if isinstance(ratio, Rational):
        return (errors + Fraction(ratio) * inconclusives) / Fraction(total)
    return (errors + ratio * inconclusives) / total


def format_rate(x: Real | None, digits: int = 3) -> str:
    return "undefined" if x is None else f"{float(x):.{digits}f}"


def rate_rows(tables: dict[tuple[GroundTruth, str], ContingencyTable]) -> list[dict]:
    """Report rows ``ground_truth, group, option, fpr, fnr`` (plus the
    relevant rate and a degenerate-denominator flag) for each table."""
    rows = []
    for (truth, group), table in tables.items():
        for opt, rs in all_rates(table).items():
            rel = rs.rate(truth)
            rows.append({
                "ground_truth": truth.value,
                "group": group,
                "option": opt.value,
                "fpr": rs.fpr,
                "fnr": rs.fnr,
                "rate": rel,
                "degenerate": rel is None or _degenerate(table, truth, opt),
            })
    return rows


def _degenerate(table: ContingencyTable, truth: GroundTruth, opt: RateOption) -> bool:
    # No correct conclusive answers (e.g. f = 0 < d): the "ignored" rate is
    # defined but can only be 1.
    if opt is not RateOption.IGNORED:
        return False
    if truth is GroundTruth.SAME_SOURCE:
        return table.a == 0
    return table.f == 0
