import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmnowcast import grid
from mmnowcast.grid import Bus, CaseError, Generator, GridCase, Line, RenewableSite, SystemInstant


@pytest.fixture(scope="module")
def case():
    return grid.builtin_ieee6()


def test_counts(case):
    assert (case.n_bus, case.n_line, case.n_gen, case.n_site) == (6, 11, 3, 2)


def test_table_values(case):
    gens = case.generators
    assert [g.cost for g in gens] == [12.0, 10.0, 8.0]
    assert [g.pmax for g in gens] == [200.0, 150.0, 180.0]
    assert [g.pmin for g in gens] == [0.0, 0.0, 0.0]
    assert all(ln.limit == 100.0 for ln in case.lines)
    assert all(b.imbalance_penalty == 100.0 for b in case.buses)
    assert all(r.curtail_penalty == 0.1 for r in case.renewables)


def test_chosen_defaults(case):
    for g in case.generators:
        assert g.cost_up == 1.5 * g.cost and g.cost_down == 0.5 * g.cost
        assert g.ramp_up == g.ramp_down == g.pmax - g.pmin
    np.testing.assert_allclose(case.load_shares(), [0, 0, 0, 1 / 3, 1 / 3, 1 / 3])
    assert case.load_shares().sum() == pytest.approx(1.0, abs=1e-15)
    assert case.site_kinds() == ("PV", "Wind")
    assert [r.bus for r in case.renewables] == [1, 2]


def test_matrices(case):
    inc = case.incidence()
    assert inc.shape == (6, 11)
    np.testing.assert_array_equal(inc.sum(axis=0), 0.0)
    assert case.gen_map().sum() == 3 and case.site_map().sum() == 2


def _write(tmp_path, text):
    p = tmp_path / "c.case"
    p.write_text(text)
    return p


MINI = """
slack_bus = 1
[[bus]]
id = 1
[[bus]]
id = 2
load_share = 1.0
[[line]]
from = 1
to = 2
reactance_pu = 0.1
limit_mw = 50.0
[[generator]]
bus = 1
pmin_mw = {pmin}
pmax_mw = 100.0
cost_eur_per_mw = 10.0
cost_up_eur_per_mw = 15.0
cost_down_eur_per_mw = 5.0
ramp_up_mw = 100.0
ramp_down_mw = 100.0
"""


def test_load_minimal(tmp_path):
    c = grid.load_case(_write(tmp_path, MINI.format(pmin=0.0)))
    assert c.n_bus == 2 and c.buses[0].imbalance_penalty == 100.0 and c.n_site == 0


def test_pmin_above_pmax(tmp_path):
    with pytest.raises(CaseError, match="pmin"):
        grid.load_case(_write(tmp_path, MINI.format(pmin=120.0)))


@pytest.mark.parametrize("edit,match", [
    (("reactance_pu = 0.1", "reactance_pu = -0.1"), "reactance"),
    (("slack_bus = 1", "slack_bus = 9"), "slack"),
    (("to = 2", "to = 1"), "self loop"),
    (("limit_mw = 50.0", "limit_mw = 50.0\ncolour = 1"), "unknown field"),
    (("cost_eur_per_mw = 10.0", "cost_eur_per_mw = \"ten\""), "expected a number"),
    (("reactance_pu = 0.1\n", ""), "missing field"),
])
def test_invariant_errors(tmp_path, edit, match):
    text = MINI.format(pmin=0.0).replace(*edit)
    with pytest.raises(CaseError, match=match):
        grid.load_case(_write(tmp_path, text))


def test_disconnected(tmp_path):
    text = MINI.format(pmin=0.0) + "[[bus]]\nid = 3\n"
    with pytest.raises(CaseError, match="connected"):
        grid.load_case(_write(tmp_path, text))


def test_parse_error_names_file(tmp_path):
    with pytest.raises(CaseError, match="c.case"):
        grid.load_case(_write(tmp_path, "slack_bus = = 1"))


def test_builtin_roundtrip(case, tmp_path):
    grid.save_case(case, tmp_path / "x.case")
    assert grid.load_case(tmp_path / "x.case") == case


pos = st.floats(0.01, 500.0, allow_nan=False)


@st.composite
def cases(draw):
    n = draw(st.integers(2, 5))
    buses = tuple(Bus(i + 1, draw(st.floats(0, 1)), draw(pos)) for i in range(n))
    # a spanning chain keeps the graph connected, extra lines on top
    lines = [Line(i + 1, i + 2, draw(pos), draw(pos)) for i in range(n - 1)]
    for _ in range(draw(st.integers(0, 3))):
        a, b = draw(st.integers(1, n)), draw(st.integers(1, n))
        if a != b:
            lines.append(Line(a, b, draw(pos), draw(pos)))
    gens = []
    for _ in range(draw(st.integers(1, 3))):
        lo = draw(st.floats(0, 100))
        gens.append(Generator(draw(st.integers(1, n)), lo, lo + draw(pos), draw(pos), draw(pos), draw(pos),
                              draw(pos), draw(pos)))
    sites = tuple(RenewableSite(draw(st.integers(1, n)), k, draw(pos)) for k in draw(st.sampled_from([(), ("PV",), ("PV", "Wind")])))
    return GridCase(buses, tuple(lines), tuple(gens), sites, slack_bus=draw(st.integers(1, n)),
                    base_mva=draw(pos), name="random")


@settings(max_examples=40, deadline=None)
@given(cases())
def test_roundtrip_property(tmp_path_factory, c):
    p = tmp_path_factory.mktemp("rt") / "r.case"
    grid.save_case(c, p)
    assert grid.load_case(p) == c


def test_variants(case):
    half = case.with_line_scale(0.5)
    assert all(ln.limit == 50.0 for ln in half.lines) and case.lines[0].limit == 100.0
    assert case.with_sites(("PV",)).site_kinds() == ("PV",)


def test_system_instant():
    inst = SystemInstant(np.array([0, 10.0]), [5.0, 3.0])
    np.testing.assert_array_equal(inst.predicted, inst.renewable)
    moved = inst.with_prediction([4.0, 3.0])
    assert moved.predicted[0] == 4.0 and inst.predicted[0] == 5.0
    with pytest.raises(ValueError):
        SystemInstant(np.array([-1.0]), [1.0])
    with pytest.raises(ValueError):
        SystemInstant(np.array([1.0]), [-1.0])
    with pytest.raises(ValueError):
        SystemInstant(np.array([1.0]), [1.0], [1.0, 2.0])


def test_frozen(case):
    with pytest.raises(dataclasses.FrozenInstanceError):
        case.slack_bus = 2
