import pytest

from peer_valuation.errors import InvalidInputError
from peer_valuation.preproc.grouping import (
    UNGROUPED,
    commune_groups,
    group_of,
    invert_grouping,
    load_grouping,
    save_grouping,
)


@pytest.fixture()
def groups():
    return {"north": ["A"], "south": ["C", "D"]}


def test_invert_grouping(groups):
    assert invert_grouping(groups) == {
        "A": "north",
        "C": "south",
        "D": "south",
    }


def test_district_in_two_groups():
    with pytest.raises(InvalidInputError, match="listed in both"):
        invert_grouping({"g1": ["A"], "g2": ["A"]})


def test_reserved_group_name():
    with pytest.raises(InvalidInputError, match="reserved"):
        invert_grouping({UNGROUPED: ["A"]})


def test_partition_keeps_order_and_collects_ungrouped(line_records, groups):
    subsets = commune_groups(line_records, invert_grouping(groups))
    assert [r.id for r in subsets["north"]] == ["H000", "H001", "H002"]
    assert [r.id for r in subsets[UNGROUPED]] == ["H003", "H004", "H005"]
    assert sum(len(s) for s in subsets.values()) == len(line_records)


def test_group_of(line_records, groups):
    labels = group_of(line_records, invert_grouping(groups))
    assert labels == ["north"] * 3 + [UNGROUPED] * 3


def test_grouping_file_round_trip(tmp_path, groups):
    path = tmp_path / "grouping.json"
    save_grouping(groups, path)
    assert load_grouping(path) == invert_grouping(groups)


def test_grouping_file_needs_groups_entry(tmp_path):
    path = tmp_path / "grouping.json"
    path.write_text('{"schema_version": 1, "north": ["A"]}')
    with pytest.raises(InvalidInputError, match="no 'groups' entry"):
        load_grouping(path)
