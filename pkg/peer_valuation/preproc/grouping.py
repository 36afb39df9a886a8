"""Groups of adjacent communes."""

from pathlib import Path
from typing import Mapping, Sequence

from peer_valuation.errors import InvalidInputError
from peer_valuation.io import load_json, save_json
from peer_valuation.preproc.records import HouseRecord

UNGROUPED = "ungrouped"


def invert_grouping(groups: Mapping[str, Sequence[str]]) -> dict[str, str]:
    """Turn ``{group: [district, ...]}`` into ``{district: group}``."""
    mapping: dict[str, str] = {}
    for group, districts in groups.items():
        if group == UNGROUPED:
            raise InvalidInputError(f"Group name {UNGROUPED} is reserved")
        for district in districts:
            if district in mapping:
                raise InvalidInputError(
                    f"District {district} is listed in both "
                    f"{mapping[district]} and {group}"
                )
            mapping[district] = group
    return mapping


def commune_groups(
    records: Sequence[HouseRecord], grouping: Mapping[str, str]
) -> dict[str, list[HouseRecord]]:
    """Partition records by the group of their district.

    Records of districts missing from ``grouping`` go to the
    ``"ungrouped"`` group. Groups keep the input order of their records.
    """
    subsets: dict[str, list[HouseRecord]] = {}
    for record in records:
        group = grouping.get(record.district, UNGROUPED)
        subsets.setdefault(group, []).append(record)
    return subsets


def group_of(
    records: Sequence[HouseRecord], grouping: Mapping[str, str]
) -> list[str]:
    """The group label of every record, in order."""
    return [grouping.get(r.district, UNGROUPED) for r in records]


def load_grouping(src_path: Path) -> dict[str, str]:
    """Read ``{"groups": {group: [district, ...]}}`` into a
    district -> group mapping."""
    document = load_json(src_path)
    if "groups" not in document:
        raise InvalidInputError(
            f"Grouping file {src_path} has no 'groups' entry"
        )
    return invert_grouping(document["groups"])


def save_grouping(groups: Mapping[str, Sequence[str]], dest_path: Path):
    invert_grouping(groups)
    save_json({"groups": {g: list(d) for g, d in groups.items()}}, dest_path)
