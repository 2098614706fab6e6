import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dalab.data import (
    DomainDataset, ParseError, figure1_toy, gaussian_shift, generate, load_csv, moons_shift, save_csv,
    train_val_split,
)


def test_figure1_toy_geometry_and_marginals():
    src, tgt = figure1_toy(epsilon=0.1, n_per_domain=2000, seed=0)
    assert len(src) == len(tgt) == 2000
    assert src.label_marginal() == 0.6 and tgt.label_marginal() == 0.4
    assert src.label_marginal() - tgt.label_marginal() == pytest.approx(0.2)
    # first coordinate carries the label, second the domain
    assert np.all(np.sign(src.features[:, 0]) == np.where(src.labels == 1, 1, -1))
    assert src.features[:, 1].mean() > 0.9 and tgt.features[:, 1].mean() < -0.9


def test_figure1_toy_validation():
    with pytest.raises(ValueError):
        figure1_toy(epsilon=0.5)
    with pytest.raises(ValueError):
        figure1_toy(n_per_domain=0)


def test_generators_are_seeded():
    for kind in ("figure1_toy", "moons_shift", "gaussian_shift"):
        a = generate(kind, {}, seed=3)
        b = generate(kind, {}, seed=3)
        c = generate(kind, {}, seed=4)
        assert np.array_equal(a[0].features, b[0].features) and np.array_equal(a[1].labels, b[1].labels)
        assert not np.array_equal(a[0].features, c[0].features)
    with pytest.raises(ValueError, match="unknown generator"):
        generate("spirals")


def test_moons_target_is_rotated_source_law():
    src, tgt = moons_shift(n_per_domain=4000, rotation_deg=90, noise=0.0, seed=0)
    # rotating the target back by 90 degrees recovers the source support
    back = tgt.features @ np.array([[0.0, -1.0], [1.0, 0.0]]).T
    np.testing.assert_allclose(np.sort(np.linalg.norm(back, axis=1))[::400],
                               np.sort(np.linalg.norm(tgt.features, axis=1))[::400])
    assert abs(back[:, 0].mean() - src.features[:, 0].mean()) < 0.05
    assert abs(back[:, 1].mean() - src.features[:, 1].mean()) < 0.05


def test_moons_label_shift():
    src, tgt = moons_shift(n_per_domain=1000, label_shift=0.2, seed=0)
    assert src.label_marginal() == 0.7 and tgt.label_marginal() == 0.3


def test_gaussian_shift_classes():
    src, tgt = gaussian_shift(n_per_domain=300, dim=3, n_classes=4, seed=1)
    assert src.dim == 3 and src.n_classes == 4 and tgt.domain == "target"


def test_dataset_validation():
    with pytest.raises(ValueError):
        DomainDataset(np.zeros((3, 2)), np.zeros(2))
    with pytest.raises(ValueError):
        DomainDataset(np.zeros((2, 2)), np.array([0, -1]))
    with pytest.raises(ValueError):
        DomainDataset(np.zeros((2, 2)), np.array([0, 1]), domain="other")


def test_csv_roundtrip(tmp_path):
    src, _ = gaussian_shift(n_per_domain=50, dim=3, seed=2)
    p = tmp_path / "s.csv"
    save_csv(src, p)
    back = load_csv(p)
    assert np.array_equal(back.features, src.features)
    assert np.array_equal(back.labels, src.labels)


@pytest.mark.parametrize("body,line,msg", [
    ("label,f0\n1,0.5\n2,abc\n", 3, "non-numeric"),
    ("label,f0\n1,0.5,3\n", 2, "expected 2 cells"),
    ("label,f0\nx,0.5\n", 2, "not an integer"),
    ("label,f0\n1,nan\n", 2, "non-finite"),
    ("lab,f0\n1,0.5\n", 1, "header"),
    ("label,f0\n", 2, "no data"),
])
def test_csv_errors_carry_line_numbers(tmp_path, body, line, msg):
    p = tmp_path / "bad.csv"
    p.write_text(body)
    with pytest.raises(ParseError, match=msg) as exc:
        load_csv(p)
    assert exc.value.line == line


def test_split_sizes():
    ds = DomainDataset(np.arange(200.0).reshape(100, 2), np.arange(100) % 2)
    tr, va = train_val_split(ds, 0.1, seed=0)
    assert len(va) == 10 and len(tr) == 90
    with pytest.raises(ValueError):
        train_val_split(ds, 1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 300), st.floats(0.01, 0.9), st.integers(0, 10**6))
def test_split_is_disjoint_partition(n, frac, seed):
    ds = DomainDataset(np.arange(n, dtype=float)[:, None], np.zeros(n, dtype=int))
    try:
        tr, va = train_val_split(ds, frac, seed=seed)
    except ValueError:
        return
    a, b = set(tr.features[:, 0]), set(va.features[:, 0])
    assert not a & b and len(a | b) == n
    tr2, va2 = train_val_split(ds, frac, seed=seed)
    assert np.array_equal(va.features, va2.features)
