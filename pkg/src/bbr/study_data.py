"""Ingestion, validation and subsetting of black box study responses.

A study file has one row per examiner x item determination.  Raw conclusion
labels are translated to four canonical categories through a
:class:`ConclusionMapping`, after which the dataset can be deduplicated
(first response per pair), filtered by ground truth, and have its
"unsuitable" responses pooled with the inconclusives or dropped.
"""

from __future__ import annotations

import configparser
import csv
import enum
import logging
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

log = logging.getLogger(__name__)

__all__ = [
    "GroundTruth",
    "Conclusion",
    "InconclusiveSubtype",
    "EliminationBasis",
    "UnsuitableHandling",
    "ExaminerGroup",
    "Response",
    "ConclusionMapping",
    "StudyDataset",
    "AnalysisPolicy",
    "StudyDataError",
    "MissingColumn",
    "UnmappedLabel",
    "InconsistentGroundTruth",
    "EmptyDataset",
    "InvalidField",
    "AllResponsesRemoved",
    "MissingBasis",
    "load_mapping",
    "builtin_mappings",
    "ingest_csv",
    "read_responses",
    "deduplicate_first_response",
    "apply_policy",
    "filter_ground_truth",
    "group_examiners",
    "write_csv",
]


class GroundTruth(str, enum.Enum):
    SAME_SOURCE = "SS"
    DIFFERENT_SOURCE = "DS"


class Conclusion(str, enum.Enum):
    IDENTIFICATION = "Identification"
    EXCLUSION = "Exclusion"
    INCONCLUSIVE = "Inconclusive"
    UNSUITABLE = "Unsuitable"

    @property
    def is_conclusive(self) -> bool:
        return self in (Conclusion.IDENTIFICATION, Conclusion.EXCLUSION)


class InconclusiveSubtype(str, enum.Enum):
    SUPPORT_SAME = "SupportSame"
    SUPPORT_DIFFERENT = "SupportDifferent"
    SUPPORT_NEITHER = "SupportNeither"


class EliminationBasis(str, enum.Enum):
    CLASS = "Class"
    INDIVIDUAL = "Individual"


class UnsuitableHandling(str, enum.Enum):
    POOL_AS_INCONCLUSIVE = "pool"
    EXCLUDE = "exclude"


class ExaminerGroup(str, enum.Enum):
    MADE_INDIVIDUAL_ELIMS = "MadeIndividualElims"
    NO_INDIVIDUAL_ELIMS = "NoIndividualElims"


# -- errors -----------------------------------------------------------------


class StudyDataError(ValueError):
    """Base class for problems with study data."""


class MissingColumn(StudyDataError):
    def __init__(self, column: str):
        super().__init__(f"missing required column {column!r}")
        self.column = column


class UnmappedLabel(StudyDataError):
    def __init__(self, label: str, line: int | None = None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"unmapped conclusion label {label!r}{where}")
        self.label = label
        self.line = line


class InconsistentGroundTruth(StudyDataError):
    def __init__(self, item_id: str):
        super().__init__(f"item {item_id!r} has more than one ground truth")
        self.item_id = item_id


class EmptyDataset(StudyDataError):
    def __init__(self, message: str = "dataset contains no responses"):
        super().__init__(message)


class InvalidField(StudyDataError):
    pass


class AllResponsesRemoved(StudyDataError):
    def __init__(self, message: str = "policy removed every response"):
        super().__init__(message)


class MissingBasis(StudyDataError):
    def __init__(self, examiner_id: str):
        super().__init__(
            f"examiner {examiner_id!r} has an exclusion without an elimination basis"
        )
        self.examiner_id = examiner_id


# -- records ----------------------------------------------------------------


@dataclass(frozen=True)
class Response:
    examiner_id: str
    item_id: str
    ground_truth: GroundTruth
    raw_conclusion: str
    canonical: Conclusion
    inconclusive_subtype: InconclusiveSubtype | None = None
    elimination_basis: EliminationBasis | None = None
    sequence: int = 0

    def __post_init__(self):
        if self.inconclusive_subtype is not None and self.canonical is not Conclusion.INCONCLUSIVE:
            raise InvalidField(
                f"subtype given for non-inconclusive response "
                f"({self.examiner_id}, {self.item_id})"
            )
        if self.elimination_basis is not None and self.canonical is not Conclusion.EXCLUSION:
            raise InvalidField(
                f"elimination basis given for non-exclusion response "
                f"({self.examiner_id}, {self.item_id})"
            )
        if self.sequence < 0:
            raise InvalidField(f"negative sequence {self.sequence}")

    @property
    def conclusive(self) -> bool:
        return self.canonical.is_conclusive


@dataclass(frozen=True)
class ConclusionMapping:
    """Raw label -> canonical category, plus optional inconclusive subtypes."""

    entries: Mapping[str, Conclusion]
    subtype_entries: Mapping[str, InconclusiveSubtype] = field(default_factory=dict)
    study_name: str = "custom"

    def canonical(self, label: str, line: int | None = None) -> Conclusion:
        try:
            return self.entries[label]
        except KeyError:
            raise UnmappedLabel(label, line) from None

    def subtype(self, label: str) -> InconclusiveSubtype | None:
        if label in self.subtype_entries:
            return self.subtype_entries[label]
        try:
            return InconclusiveSubtype(label)
        except ValueError:
            return None

    @classmethod
    def from_config(cls, text: str) -> "ConclusionMapping":
        parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
        parser.optionxform = str  # labels are case sensitive
        parser.read_string(text)
        if not parser.has_section("labels"):
            raise StudyDataError("mapping config needs a [labels] section")
        name = parser.get("study", "name", fallback="custom")
        entries = {}
        for raw, category in parser.items("labels"):
            try:
                entries[raw] = Conclusion(category.strip())
            except ValueError:
                raise StudyDataError(
                    f"unknown category {category!r} for label {raw!r}"
                ) from None
        subtypes = {}
        if parser.has_section("subtypes"):
            for raw, sub in parser.items("subtypes"):
                subtypes[raw] = InconclusiveSubtype(sub.strip())
        return cls(entries=entries, subtype_entries=subtypes, study_name=name)


def builtin_mappings() -> list[str]:
    files = resources.files("bbr").joinpath("mappings")
    return sorted(p.name[:-4] for p in files.iterdir() if p.name.endswith(".ini"))


def load_mapping(name_or_path: str | Path) -> ConclusionMapping:
    """Load a built-in mapping by name (``ulery2011``, ``monson2022``,
    ``generic``) or a mapping config file by path."""
    name = str(name_or_path)
    if name in builtin_mappings():
        text = resources.files("bbr").joinpath("mappings", f"{name}.ini").read_text("utf-8")
    else:
        path = Path(name)
        if not path.exists():
            raise StudyDataError(
                f"unknown mapping {name!r}; built-ins are {', '.join(builtin_mappings())}"
            )
        text = path.read_text("utf-8")
    return ConclusionMapping.from_config(text)


# -- dataset ----------------------------------------------------------------


@dataclass(frozen=True)
class StudyDataset:
    """An immutable, validated collection of responses.

    Examiner and item rosters keep first-appearance order so that every
    derived array has a reproducible layout.
    """

    responses: tuple[Response, ...]
    examiners: tuple[str, ...]
    items: Mapping[str, GroundTruth]
    assignment: Mapping[str, frozenset[str]]

    @classmethod
    def from_responses(cls, responses: Iterable[Response]) -> "StudyDataset":
        responses = tuple(responses)
        examiners: dict[str, None] = {}
        items: dict[str, GroundTruth] = {}
        assignment: dict[str, set[str]] = {}
        for r in responses:
            examiners.setdefault(r.examiner_id, None)
            truth = items.setdefault(r.item_id, r.ground_truth)
            if truth is not r.ground_truth:
                raise InconsistentGroundTruth(r.item_id)
            assignment.setdefault(r.examiner_id, set()).add(r.item_id)
        return cls(
            responses=responses,
            examiners=tuple(examiners),
            items=items,
            assignment={k: frozenset(v) for k, v in assignment.items()},
        )

    def __len__(self) -> int:
        return len(self.responses)

    @property
    def item_ids(self) -> tuple[str, ...]:
        return tuple(self.items)

    def n_items_per_examiner(self) -> dict[str, int]:
        return {e: len(s) for e, s in self.assignment.items()}

    def n_examiners_per_item(self) -> dict[str, int]:
        counts = dict.fromkeys(self.items, 0)
        for s in self.assignment.values():
            for item in s:
                counts[item] += 1
        return counts

    def ground_truths(self) -> set[GroundTruth]:
        return set(self.items.values())

    def duplicate_pairs(self) -> int:
        """Number of responses beyond the first for repeated pairs."""
        return len(self.responses) - sum(len(s) for s in self.assignment.values())

    def category_counts(self) -> dict[tuple[GroundTruth, Conclusion], int]:
        counts = {(g, c): 0 for g in GroundTruth for c in Conclusion}
        for r in self.responses:
            counts[r.ground_truth, r.canonical] += 1
        return counts

    def subset_examiners(self, examiners: Iterable[str]) -> "StudyDataset":
        keep = set(examiners)
        return StudyDataset.from_responses(r for r in self.responses if r.examiner_id in keep)

    def conclusive_matrix(self):
        """Dense view: ``(examiners, items, X, mask)``.

        ``X[i, j]`` is 1 when examiner i was conclusive on item j and ``mask``
        marks assigned pairs.  Requires one response per pair.
        """
        if self.duplicate_pairs():
            raise StudyDataError("conclusive_matrix needs a deduplicated dataset")
        e_index = {e: i for i, e in enumerate(self.examiners)}
        i_index = {it: j for j, it in enumerate(self.items)}
        X = np.zeros((len(e_index), len(i_index)), dtype=np.int8)
        mask = np.zeros(X.shape, dtype=bool)
        for r in self.responses:
            i, j = e_index[r.examiner_id], i_index[r.item_id]
            mask[i, j] = True
            X[i, j] = r.conclusive
        return self.examiners, tuple(self.items), X, mask


@dataclass(frozen=True)
class AnalysisPolicy:
    """How unsuitable responses and ground-truth subsets are handled.

    The default pools unsuitable responses with the inconclusives, which is
    what the variance and model analyses use; error-rate tables drop them
    (see :meth:`for_error_rates`).
    """

    unsuitable_handling: UnsuitableHandling = UnsuitableHandling.POOL_AS_INCONCLUSIVE
    ground_truth_filter: GroundTruth | None = None
    group_by_elimination_basis: bool = False

    @classmethod
    def for_error_rates(cls, **kwargs) -> "AnalysisPolicy":
        return cls(unsuitable_handling=UnsuitableHandling.EXCLUDE, **kwargs)


# -- operations -------------------------------------------------------------

REQUIRED_COLUMNS = ("examiner", "item", "ground_truth", "conclusion")


def _parse_enum(enum_cls, value: str, column: str, line: int):
    try:
        return enum_cls(value)
    except ValueError:
        allowed = ", ".join(m.value for m in enum_cls)
        raise InvalidField(
            f"line {line}: bad {column} value {value!r} (expected one of {allowed})"
        ) from None


def read_responses(lines: Iterable[str], mapping: ConclusionMapping) -> list[Response]:
    reader = csv.DictReader(lines)
    if reader.fieldnames is None:
        raise EmptyDataset("file is empty")
    header = [h.strip() for h in reader.fieldnames]
    reader.fieldnames = header
    for col in REQUIRED_COLUMNS:
        if col not in header:
            raise MissingColumn(col)

    responses = []
    for k, row in enumerate(reader):
        line = k + 2
        raw = row["conclusion"].strip()
        canonical = mapping.canonical(raw, line)
        truth = _parse_enum(GroundTruth, row["ground_truth"].strip().upper(), "ground_truth", line)

        subtype = None
        if canonical is Conclusion.INCONCLUSIVE:
            subtype = mapping.subtype(raw)
            sub_raw = (row.get("subtype") or "").strip()
            if sub_raw:
                subtype = mapping.subtype(sub_raw)
                if subtype is None:
                    raise InvalidField(f"line {line}: unknown subtype {sub_raw!r}")

        basis = None
        basis_raw = (row.get("basis") or "").strip()
        if basis_raw:
            if canonical is not Conclusion.EXCLUSION:
                raise InvalidField(f"line {line}: basis given for a non-exclusion")
            basis = _parse_enum(EliminationBasis, basis_raw.capitalize(), "basis", line)

        seq_raw = (row.get("sequence") or "").strip()
        if seq_raw:
            try:
                sequence = int(seq_raw)
            except ValueError:
                raise InvalidField(f"line {line}: sequence {seq_raw!r} is not an integer") from None
            if sequence < 0:
                raise InvalidField(f"line {line}: negative sequence")
        else:
            sequence = k

        responses.append(
            Response(
                examiner_id=row["examiner"].strip(),
                item_id=row["item"].strip(),
                ground_truth=truth,
                raw_conclusion=raw,
                canonical=canonical,
                inconclusive_subtype=subtype,
                elimination_basis=basis,
                sequence=sequence,
            )
        )
    if not responses:
        raise EmptyDataset()
    return responses


def ingest_csv(path: str | Path, mapping: ConclusionMapping | str) -> StudyDataset:
    """Read and validate a study CSV.

    Columns: ``examiner,item,ground_truth,conclusion`` plus optional
    ``subtype``, ``basis`` and ``sequence``.  A missing sequence defaults to
    file order.  Repeated examiner x item pairs are kept; call
    :func:`deduplicate_first_response` to reduce them.
    """
    if not isinstance(mapping, ConclusionMapping):
        mapping = load_mapping(mapping)
    with open(path, newline="", encoding="utf-8") as fh:
        responses = read_responses(fh, mapping)
    dataset = StudyDataset.from_responses(responses)
    log.info(
        "ingested %d responses (%d examiners, %d items) from %s",
        len(dataset), len(dataset.examiners), len(dataset.items), path,
    )
    return dataset


def deduplicate_first_response(dataset: StudyDataset) -> StudyDataset:
    """Keep only the earliest response (minimal sequence) for each pair.

    Equal sequences are resolved in favour of the earlier row.
    """
    # dict order is first appearance of each pair, which keeps the roster order
    best: dict[tuple[str, str], int] = {}
    for k, r in enumerate(dataset.responses):
        key = (r.examiner_id, r.item_id)
        j = best.get(key)
        if j is None or r.sequence < dataset.responses[j].sequence:
            best[key] = k
    if len(best) == len(dataset.responses):
        return dataset
    keep = list(best.values())
    dropped = len(dataset.responses) - len(keep)
    log.info("deduplication dropped %d repeated responses", dropped)
    return StudyDataset.from_responses(dataset.responses[k] for k in keep)


def filter_ground_truth(dataset: StudyDataset, truth: GroundTruth) -> StudyDataset:
    return apply_policy(
        dataset,
        AnalysisPolicy(
            unsuitable_handling=UnsuitableHandling.POOL_AS_INCONCLUSIVE,
            ground_truth_filter=truth,
        ),
    )


def apply_policy(dataset: StudyDataset, policy: AnalysisPolicy) -> StudyDataset:
    responses = []
    for r in dataset.responses:
        if policy.ground_truth_filter is not None and r.ground_truth is not policy.ground_truth_filter:
            continue
        if r.canonical is Conclusion.UNSUITABLE:
            if policy.unsuitable_handling is UnsuitableHandling.EXCLUDE:
                continue
            r = replace(r, canonical=Conclusion.INCONCLUSIVE)
        responses.append(r)
    if not responses:
        raise AllResponsesRemoved()
    out = StudyDataset.from_responses(responses)
    dropped_e = set(dataset.examiners) - set(out.examiners)
    dropped_i = set(dataset.items) - set(out.items)
    if dropped_e or dropped_i:
        log.info(
            "policy left %d examiners and %d items without responses; dropped",
            len(dropped_e), len(dropped_i),
        )
    return out


def group_examiners(
    dataset: StudyDataset, auxiliary: StudyDataset | None = None
) -> dict[str, ExaminerGroup]:
    """Split examiners by whether they made any elimination on individual
    characteristics, looking across ``dataset`` and ``auxiliary`` (for
    example the cartridge-case responses of the same examiners)."""
    made = set()
    sources = [dataset] if auxiliary is None else [dataset, auxiliary]
    for ds in sources:
        for r in ds.responses:
            if r.canonical is not Conclusion.EXCLUSION:
                continue
            if r.elimination_basis is None:
                raise MissingBasis(r.examiner_id)
            if r.elimination_basis is EliminationBasis.INDIVIDUAL:
                made.add(r.examiner_id)
    return {
        e: ExaminerGroup.MADE_INDIVIDUAL_ELIMS if e in made else ExaminerGroup.NO_INDIVIDUAL_ELIMS
        for e in dataset.examiners
    }


def write_csv(dataset: StudyDataset, path: str | Path) -> None:
    """Write ``dataset`` in the ingestible CSV layout."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["examiner", "item", "ground_truth", "conclusion", "subtype", "basis", "sequence"])
        for r in dataset.responses:
            w.writerow([
                r.examiner_id,
                r.item_id,
                r.ground_truth.value,
                r.raw_conclusion,
                r.inconclusive_subtype.value if r.inconclusive_subtype else "",
                r.elimination_basis.value if r.elimination_basis else "",
                r.sequence,
            ])
