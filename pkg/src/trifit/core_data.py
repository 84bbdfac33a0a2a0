"""Variant records, per-assay label binarization and fold splitting."""

from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional

AMINO_ACIDS = "ACDEFGHIKLMNPQRSTVWY"
AA_INDEX = {aa: i for i, aa in enumerate(AMINO_ACIDS)}

THREE_TO_ONE = {
    "ALA": "A", "CYS": "C", "ASP": "D", "GLU": "E", "PHE": "F",
    "GLY": "G", "HIS": "H", "ILE": "I", "LYS": "K", "LEU": "L",
    "MET": "M", "ASN": "N", "PRO": "P", "GLN": "Q", "ARG": "R",
    "SER": "S", "THR": "T", "VAL": "V", "TRP": "W", "TYR": "Y",
}
ONE_TO_THREE = {v: k for k, v in THREE_TO_ONE.items()}

# Split sizes of the official fold_random_5 partition on the full benchmark.
# Documentation only; never reproduced at desk scale.
PROTEINGYM_SPLIT_SIZES = {"train": 417_307, "val": 139_524, "test": 139_480}

TRAIN_FOLDS = (0, 1, 2)
VAL_FOLDS = (3,)
TEST_FOLDS = (4,)

_MUTATION_RE = re.compile(r"^([A-Za-z])(\d+)([A-Za-z])$")


class VariantParseError(ValueError):
    pass


class BinarizationError(ValueError):
    pass


def parse_amino_acid(code: str) -> str:
    """Validate a one-letter residue code and return it upper-cased."""
    aa = code.upper()
    if len(aa) != 1 or aa not in AA_INDEX:
        raise ValueError(f"unknown residue {code}")
    return aa


@dataclass(frozen=True)
class VariantRecord:
    protein_id: str
    position: int
    wt: str
    mut: str
    dms_score: float
    label: Optional[int] = None
    fold: Optional[int] = None

    def __post_init__(self):
        if self.position < 1:
            raise ValueError(f"position must be >= 1, got {self.position}")
        parse_amino_acid(self.wt)
        parse_amino_acid(self.mut)
        if self.wt == self.mut:
            raise ValueError(f"not a substitution: {self.mutation}")
        if self.label is not None and self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")
        if self.fold is not None and not 0 <= self.fold <= 4:
            raise ValueError(f"fold must be in [0, 4], got {self.fold}")

    @property
    def mutation(self) -> str:
        return f"{self.wt}{self.position}{self.mut}"

    @property
    def key(self) -> tuple[str, int, str, str]:
        return (self.protein_id, self.position, self.wt, self.mut)


@dataclass
class DatasetSplit:
    train: list[VariantRecord] = field(default_factory=list)
    val: list[VariantRecord] = field(default_factory=list)
    test: list[VariantRecord] = field(default_factory=list)

    def sizes(self) -> dict[str, int]:
        return {"train": len(self.train), "val": len(self.val), "test": len(self.test)}


DEFAULT_COLUMNS = {"mutant": "mutant", "score": "DMS_score", "fold": "fold_random_5"}


def parse_mutation(token: str) -> tuple[str, int, str]:
    """Split ``"A24G"`` into ``("A", 24, "G")``.

    Multi-mutants (``"A24G:K30R"``) are rejected.
    """
    token = token.strip()
    if ":" in token:
        raise VariantParseError(f"multi-mutant not supported: {token!r}")
    m = _MUTATION_RE.match(token)
    if m is None:
        raise VariantParseError(f"malformed mutation token {token!r}")
    wt, pos, mut = m.groups()
    return wt, int(pos), mut


def parse_variant_csv(
    text: str,
    column_map: Optional[Mapping[str, str]] = None,
    protein_id: str = "",
) -> list[VariantRecord]:
    """Parse a per-assay variant CSV (ProteinGym layout) into records.

    ``column_map`` may override the ``mutant``, ``score``, ``fold`` and
    ``protein`` column names. When no protein column exists every row gets
    ``protein_id``. Line numbers in errors count the header as line 1.
    """
    cols = dict(DEFAULT_COLUMNS)
    if column_map:
        cols.update(column_map)
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        raise VariantParseError("missing header row")
    for required in ("mutant", "score"):
        if cols[required] not in reader.fieldnames:
            raise VariantParseError(f"missing column {cols[required]!r}")
    has_fold = cols["fold"] in reader.fieldnames
    protein_col = cols.get("protein")
    has_protein = protein_col is not None and protein_col in reader.fieldnames

    records = []
    for row in reader:
        line = reader.line_num
        try:
            wt, pos, mut = parse_mutation(row[cols["mutant"]])
        except VariantParseError as exc:
            raise VariantParseError(f"{exc} at line {line}") from None
        for aa in (wt, mut):
            if aa.upper() not in AA_INDEX:
                raise VariantParseError(f"unknown residue {aa} at line {line}")
        try:
            score = float(row[cols["score"]])
        except (TypeError, ValueError):
            raise VariantParseError(f"bad score {row[cols['score']]!r} at line {line}") from None
        fold = None
        if has_fold and row[cols["fold"]] not in (None, ""):
            fold = int(row[cols["fold"]])
        pid = row[protein_col] if has_protein else protein_id
        try:
            records.append(VariantRecord(pid, pos, wt.upper(), mut.upper(), score, fold=fold))
        except ValueError as exc:
            raise VariantParseError(f"{exc} at line {line}") from None
    return records


def format_variant_csv(records: Iterable[VariantRecord], column_map=None) -> str:
    cols = dict(DEFAULT_COLUMNS)
    if column_map:
        cols.update(column_map)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([cols["mutant"], cols["score"], cols["fold"]])
    for r in records:
        writer.writerow([r.mutation, repr(r.dms_score), "" if r.fold is None else r.fold])
    return buf.getvalue()


def _tail_count(n: int, quantile: float) -> int:
    # guard against 0.3 * 10 landing a hair above 3
    return math.ceil(round(quantile * n, 9))


def binarize_labels(records: list[VariantRecord], quantile: float = 0.30) -> list[VariantRecord]:
    """Label the top/bottom ``quantile`` of one assay and drop the middle band.

    With ``k = ceil(quantile * n)`` (nearest rank), a record is labelled 1 when
    its score is strictly above every score outside the top-``k`` slice and 0
    when strictly below every score outside the bottom-``k`` slice. Scores tied
    across a threshold therefore fall into the dropped middle band.
    """
    if not 0.0 < quantile <= 0.5:
        raise BinarizationError(f"quantile must be in (0, 0.5], got {quantile}")
    if len({r.protein_id for r in records}) > 1:
        raise BinarizationError("records span several assays; binarize each separately")
    n = len(records)
    if n < math.ceil(round(1.0 / quantile, 9)):
        raise BinarizationError("assay too small to binarize")
    scores = sorted(r.dms_score for r in records)
    k = _tail_count(n, quantile)
    low_cut = scores[k]          # smallest score outside the bottom slice
    high_cut = scores[n - k - 1]  # largest score outside the top slice
    out = []
    for r in records:
        if r.dms_score > high_cut:
            out.append(replace(r, label=1))
        elif r.dms_score < low_cut:
            out.append(replace(r, label=0))
    return out


def binarize_by_assay(records: list[VariantRecord], quantile: float = 0.30) -> list[VariantRecord]:
    """Apply :func:`binarize_labels` separately to every protein_id group."""
    groups: dict[str, list[VariantRecord]] = {}
    for r in records:
        groups.setdefault(r.protein_id, []).append(r)
    out = []
    for pid in groups:
        out.extend(binarize_labels(groups[pid], quantile))
    return out


def split_by_fold(records: list[VariantRecord]) -> DatasetSplit:
    split = DatasetSplit()
    for r in records:
        if r.fold is None:
            raise ValueError(f"record {r.protein_id}:{r.mutation} has no fold")
        if r.fold in TRAIN_FOLDS:
            split.train.append(r)
        elif r.fold in VAL_FOLDS:
            split.val.append(r)
        else:
            split.test.append(r)
    return split
