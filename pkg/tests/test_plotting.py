import numpy as np
import pytest

from cmcbubble.plotting import PLOT_KINDS, SchemaMismatch, render

DRIFT = {"projection": "kernel",
         "rows": [{"eps": e, "force": [2.0 * e**3, -0.5 * e**3, 1e-3 * e**3]} for e in (0.08, 0.04, 0.02)]}
ORDER = {"data": {"eps": [0.08, 0.04], "uncorrected": [4e-3, 1e-3], "corrected": [8e-4, 1e-4]}}
GAP = {"data": {"singular_values": [1e-4, 2e-4, 3e-4, 0.5, 0.9], "dimension": 3}}


@pytest.mark.parametrize("kind,data", [("drift", DRIFT), ("residual-order", ORDER), ("kernel-gap", GAP)])
def test_render_is_byte_stable(kind, data, tmp_path):
    a, b = tmp_path / "a.svg", tmp_path / "b.svg"
    render(data, kind, str(a))
    render(data, kind, str(b))
    text = a.read_text()
    assert text.startswith("<?xml") and "<svg" in text
    assert "dc:date" not in text
    assert a.read_bytes() == b.read_bytes()


def test_kinds_listed():
    assert set(PLOT_KINDS) == {"drift", "residual-order", "kernel-gap"}


@pytest.mark.parametrize("kind,data", [
    ("drift", {"rows": []}),
    ("drift", {"projection": "kernel"}),
    ("residual-order", {"eps": [0.1]}),
    ("kernel-gap", {"data": {"singular_values": []}}),
    ("kernel-gap", {}),
])
def test_schema_mismatch(kind, data, tmp_path):
    with pytest.raises(SchemaMismatch):
        render(data, kind, str(tmp_path / "x.svg"))


def test_unknown_kind(tmp_path):
    with pytest.raises(ValueError):
        render(DRIFT, "pie", str(tmp_path / "x.svg"))


def test_drift_with_vanishing_component(tmp_path):
    data = {"rows": [{"eps": e, "force": [e**3, 0.0, 0.0]} for e in (0.08, 0.04)]}
    render(data, "drift", str(tmp_path / "x.svg"))
    assert np.isfinite((tmp_path / "x.svg").stat().st_size)
