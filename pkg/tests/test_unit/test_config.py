import pytest

from peer_valuation.config import (
    KnhsConfig,
    RunConfig,
    SchemaConfig,
    TrainConfig,
)
from peer_valuation.errors import InvalidInputError


def test_schema_required_columns():
    schema = SchemaConfig(continuous=("rooms",), categorical=("material",))
    assert schema.required_columns[0] == "property_id"
    assert schema.required_columns[-2:] == ["rooms", "material"]


def test_from_dict_turns_lists_into_tuples():
    schema = SchemaConfig.from_dict(
        {"schema_version": 1, "continuous": ["rooms", "age_years"]}
    )
    assert schema.continuous == ("rooms", "age_years")


def test_from_dict_rejects_unknown_keys():
    with pytest.raises(InvalidInputError, match="Unknown TrainConfig keys"):
        TrainConfig.from_dict({"epoch": 10})


@pytest.mark.parametrize(
    "kwargs, message",
    [
        ({"split_ratio": 1.0}, "split_ratio"),
        ({"learning_rate": 0.0}, "learning_rate"),
        ({"epochs": -1}, "epochs"),
        ({"optimizer": "rmsprop"}, "Unknown optimizer"),
    ],
)
def test_train_config_validation(kwargs, message):
    with pytest.raises(InvalidInputError, match=message):
        TrainConfig(**kwargs)


@pytest.mark.parametrize(
    "kwargs, message",
    [({"t_km": 0.0}, "t_km"), ({"t_km": 1.0, "k": 0}, "k must be")],
)
def test_knhs_config_validation(kwargs, message):
    with pytest.raises(InvalidInputError, match=message):
        KnhsConfig(**kwargs)


def test_knhs_threshold_has_no_default():
    assert KnhsConfig().t_km is None


def test_run_config_round_trip():
    config = RunConfig(
        command="train",
        seed=3,
        paths={"input": "houses.csv"},
        knhs=KnhsConfig(t_km=1.5, weights={"appraisal_uf": 2.0}),
        model={"kind": "pd_gcn"},
        train=TrainConfig(epochs=5),
    )
    assert RunConfig.from_dict(config.to_dict()) == config


def test_run_config_rejects_unknown_sections():
    with pytest.raises(InvalidInputError, match="Unknown RunConfig keys"):
        RunConfig.from_dict({"command": "train", "optim": {}})
