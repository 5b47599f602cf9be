import io

import numpy as np
import pytest
from scipy.special import expit

from tgom.data import (
    GeneratorSpec,
    PanelValidationError,
    assign_cohorts,
    from_days,
    generate_dataset,
    parse_panel,
    to_days,
    write_ground_truth,
    write_panel,
)
from tgom.model import CohortDirichletParams, CohortPartition, DirichletParams

from helpers import make_spec

HEADER = "id,wave,interview_date,dob,eat,walk\n"


def parse_text(text, **kw):
    return parse_panel(io.StringIO(text), **kw)


def test_empty_file_with_header():
    data = parse_text(HEADER)
    assert data.n_individuals == 0 and data.n_items == 2
    assert data.item_labels == ("eat", "walk")


def test_eightieth_birthday_is_age_zero():
    # years are 365 days, so the 80th birthday falls 80 * 365 days after birth
    dob = "1910-03-15"
    interview = from_days(to_days(dob) + 80 * 365)
    data = parse_text(HEADER + f"a,1990,{interview},{dob},0,1\n")
    assert data.ages[0, 0] == 0.0
    assert data.outcomes[0, 0].tolist() == [0, 1]


def test_ages_and_wave_order():
    text = HEADER + ("a,w2,1994-06-01,1905-06-01,1,1\n"
                     "a,w1,1989-06-01,1905-06-01,0,1\n"
                     "b,w2,1994-07-01,1912-01-01,0,0\n")
    data = parse_text(text)
    assert data.wave_labels == ("w1", "w2")
    assert data.observed.tolist() == [[True, True], [False, True]]
    want = (to_days("1994-06-01") - to_days("1905-06-01")) / 365 - 80
    assert data.ages[0, 1] == want
    assert np.isnan(data.ages[1, 0]) and data.outcomes[1, 0].tolist() == [-1, -1]


def issues_of(text, **kw):
    with pytest.raises(PanelValidationError) as exc:
        parse_text(text, **kw)
    return exc.value.issues


def test_non_binary_names_row_and_column():
    (issue,) = issues_of(HEADER + "a,1,1990-01-01,1905-01-01,0,1\nb,1,1990-01-01,1905-01-01,0,2\n")
    assert (issue.row, issue.column, issue.code) == (3, "walk", "non_binary")
    assert "3" in str(issue) and "walk" in str(issue)


def test_validation_errors_are_distinct_and_all_reported():
    text = HEADER + ("a,1,1990-01-01,1905-01-01,0,1\n"
                     "a,1,1991-01-01,1905-01-01,0,1\n"      # duplicate (id, wave)
                     "b,1,1990-01-01,1905-01-01,1,\n"       # partial wave
                     "c,1,1990-01-01,,1,1\n"                # no dob
                     "d,1,1990-01-01,1905-01-01,yes,0\n")   # non-binary
    issues = issues_of(text)
    assert [(i.row, i.code) for i in issues] == [(3, "duplicate"), (4, "partial_wave"),
                                                  (5, "missing_dob"), (6, "non_binary")]
    assert issues[1].column == "walk"


def test_require_dob_covers_blank_rows():
    text = HEADER + "a,1,1990-01-01,1905-01-01,0,1\na,2,,,,\n"
    assert parse_text(text).n_individuals == 1
    codes = {i.code for i in issues_of(text, require_dob=True)}
    assert codes == {"missing_dob"}


def test_other_errors():
    assert issues_of("")[0].code == "bad_header"
    assert issues_of("id,wave,dob,interview_date,a\n")[0].code == "bad_header"
    assert issues_of(HEADER + "a,1,1990-13-01,1905-01-01,0,1\n")[0].code == "bad_date"
    assert issues_of(HEADER + "a,1,1990-01-01,1905-01-01,0\n")[0].code == "bad_row"
    text = HEADER + "a,1,1990-01-01,1905-01-01,0,1\na,2,1989-01-01,1905-01-01,0,1\n"
    assert issues_of(text, wave_labels=["1", "2"])[0].code == "age_order"
    assert issues_of(HEADER + "a,1,1990-01-01,1905-01-01,0,1\na,2,1991-01-01,1906-01-01,0,1\n")[0].code \
        == "inconsistent_dob"


def test_blank_rows_are_unobserved_waves():
    data = parse_text(HEADER + "a,1,1990-01-01,1905-01-01,0,1\na,2,,1905-01-01,,\n", wave_labels=["1", "2"])
    assert data.observed.tolist() == [[True, False]]


def test_parse_write_roundtrip(tmp_path):
    data, _ = generate_dataset(make_spec([[95, 80], [75, 70]], n=300), 4)
    write_panel(data, tmp_path / "a.csv")
    back = parse_panel(tmp_path / "a.csv")
    for name in ("outcomes", "ages", "observed", "dob", "interview"):
        np.testing.assert_array_equal(getattr(back, name), getattr(data, name))
    assert back.ids == data.ids and back.item_labels == data.item_labels and back.wave_labels == data.wave_labels
    assert back.fingerprint() == data.fingerprint()
    write_panel(back, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


# --- cohorts ----------------------------------------------------------------------------------

TABLE_CUTS = ("1906-01-01", "1914-01-01", "1919-01-01", "1926-01-01")


def test_single_interval_partition():
    data, _ = generate_dataset(make_spec([[90], [75]], n=50), 1)
    index, table = assign_cohorts(data, CohortPartition(()))
    assert np.all(index == 0)
    assert table.shape == (1, 1 + data.n_waves)
    assert table.iloc[0, 1:].sum() == data.observed.sum()


def test_table_partition_populates_five_cohorts():
    spec = make_spec([[90], [75]], n=3000, waves=(1982, 1984, 1989, 1994, 1999, 2004),
                     dob=("1885-01-01", "1940-01-01"))
    data, _ = generate_dataset(spec, 2)
    part = CohortPartition(tuple(to_days(c) for c in TABLE_CUTS))
    index, table = assign_cohorts(data, part)
    assert np.all(np.bincount(index, minlength=5) > 0)
    assert list(table.index) == ["1", "2", "3", "4", "5"]
    assert table["dob"].iloc[0] == "--1906-01-01" and table["dob"].iloc[4] == "1926-01-01--"
    # the youngest cohort is too young for the first wave
    assert table.iloc[4, 1] == 0 and table.iloc[4, -1] > 0


def test_dob_on_cut_point_goes_to_later_cohort():
    part = CohortPartition(tuple(to_days(c) for c in TABLE_CUTS))
    cut = to_days("1914-01-01")
    assert part.index_of(np.array([cut - 1, cut, cut + 1])).tolist() == [1, 2, 2]


def test_assign_cohorts_needs_dob():
    data, _ = generate_dataset(make_spec([[90]], xi=(1.0,), n=5), 1)
    from tgom.model import PanelDataset
    bare = PanelDataset.from_arrays(data.outcomes, data.ages, data.observed)
    with pytest.raises(ValueError):
        assign_cohorts(bare, CohortPartition(()))


# --- generator ---------------------------------------------------------------------------------


def binned_check(y, p, ages, edges):
    """Per-bin |mean y - mean p| in binomial standard errors."""
    out = []
    for lo, hi in zip(edges, edges[1:]):
        sel = (ages >= lo) & (ages < hi)
        if sel.sum() < 30:
            continue
        se = np.sqrt((p[sel] * (1 - p[sel])).sum()) / sel.sum()
        out.append(abs(y[sel].mean() - p[sel].mean()) / se)
    return np.array(out)


def cells(data):
    obs = data.observed
    return data.outcomes[obs].astype(float), data.ages[obs]


def test_degenerate_mixture_follows_first_profile():
    spec = make_spec([[85, 95], [70, 72]], alpha0=1e8, xi=(1 - 1e-9, 1e-9), n=4000)
    data, truth = generate_dataset(spec, 3)
    assert np.all(truth.memberships[:, 0] > 1 - 1e-6)
    y, ages = cells(data)
    for j in range(2):
        p = expit(spec.params.beta0[0, j] + spec.params.beta1[0, j] * ages)
        assert np.all(binned_check(y[:, j], p, ages, np.arange(-20, 31, 5)) < 3)


def test_single_profile_tracks_logistic_curve():
    spec = make_spec([[88]], slope=0.15, xi=(1.0,), n=5000)
    data, _ = generate_dataset(spec, 5)
    y, ages = cells(data)
    p = expit(spec.params.beta0[0, 0] + spec.params.beta1[0, 0] * ages)
    z = binned_check(y[:, 0], p, ages, np.arange(-20, 31, 2.5))
    assert len(z) >= 10 and np.all(z < 3)


def test_augmented_and_marginal_paths_agree():
    kw = dict(alpha0=1.0, xi=(0.6, 0.4), n=20000)
    a, ta = generate_dataset(make_spec([[95, 80], [72, 70]], **kw), 6)
    b, tb = generate_dataset(make_spec([[95, 80], [72, 70]], path="marginal", **kw), 6)
    np.testing.assert_array_equal(ta.memberships, tb.memberships)     # same g
    assert tb.z is None and ta.z.shape == (a.n_rows, 2)
    ya, _ = cells(a)
    yb, _ = cells(b)
    for j in range(2):
        pa, pb = ya[:, j].mean(), yb[:, j].mean()
        se = np.sqrt(pa * (1 - pa) / len(ya) + pb * (1 - pb) / len(yb))
        assert abs(pa - pb) < 3 * se


def test_eligibility_and_truth():
    spec = make_spec([[90], [75]], n=400, eligibility_age=70.0)
    data, truth = generate_dataset(spec, 7)
    raw = data.ages[data.observed] + 80
    assert raw.min() >= 70
    assert np.all(data.observed.any(axis=1))
    assert truth.memberships.shape == (400, 2)
    np.testing.assert_allclose(truth.memberships.sum(axis=1), 1, atol=1e-12)
    assert np.all((truth.z >= 0) & (truth.z < 2))


def test_cohort_drift_is_monotone():
    cuts = ("1908-01-01", "1916-01-01")
    pops = tuple(DirichletParams(2.0, (x, 1 - x)) for x in (0.3, 0.5, 0.75))
    spec = make_spec([[95], [75]], n=6000, dirichlet=CohortDirichletParams(pops),
                     partition=CohortPartition(tuple(to_days(c) for c in cuts)),
                     dob=("1900-01-01", "1925-01-01"))
    _, truth = generate_dataset(spec, 8)
    share = [np.mean(truth.memberships[truth.cohort == c, 0] > 0.5) for c in range(3)]
    assert share[0] < share[1] < share[2]


def test_empty_and_seeded_generation(tmp_path):
    data, truth = generate_dataset(make_spec([[90], [75]], n=0), 1)
    assert data.n_individuals == 0 and truth.memberships.shape == (0, 2)
    a, _ = generate_dataset(make_spec([[90], [75]], n=50), 9)
    b, _ = generate_dataset(make_spec([[90], [75]], n=50), 9)
    c, _ = generate_dataset(make_spec([[90], [75]], n=50), 10)
    assert a.fingerprint() == b.fingerprint() != c.fingerprint()


def test_spec_json_roundtrip(tmp_path):
    pops = tuple(DirichletParams(2.0, (x, 1 - x)) for x in (0.3, 0.7))
    spec = make_spec([[95], [75]], n=10, dirichlet=CohortDirichletParams(pops),
                     partition=CohortPartition((to_days("1910-01-01"),)), item_labels=("eat",))
    back = GeneratorSpec.from_json(spec.to_json())
    assert back.to_json() == spec.to_json()
    data, truth = generate_dataset(back, 1)
    write_ground_truth(truth, data, tmp_path / "t.json")
    assert (tmp_path / "t.json").read_text().startswith("{")


def test_bad_spec_rejected():
    with pytest.raises(ValueError):
        make_spec([[90], [75]], waves=(1990, 1985))
    with pytest.raises(ValueError):
        make_spec([[90], [75]], xi=(0.2, 0.3, 0.5))
