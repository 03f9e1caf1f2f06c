import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from lecam.schemas import ControlRow, validate_table


def test_missing_cells_read_as_none():
    frame = pd.DataFrame([{
        "policy": "naive", "domain": "target", "mean_return": -10.0, "se": 0.5,
        "gain_x": -1.0, "gain_y": np.nan, "sigma_hat_x": np.nan, "sigma_hat_y": np.nan,
    }])
    (row,) = validate_table("control-1d", frame)
    assert isinstance(row, ControlRow)
    assert row.gain_y is None


def test_extra_columns_rejected():
    frame = pd.DataFrame([{"test": "A1", "metric": "m", "result": "x=1", "status": "Confirmed", "extra": 1}])
    with pytest.raises(ValidationError):
        validate_table("verify", frame)


def test_bad_status_rejected():
    frame = pd.DataFrame([{"test": "A1", "metric": "m", "result": "x=1", "status": "Maybe"}])
    with pytest.raises(ValidationError):
        validate_table("verify", frame)
