import numpy as np
import pytest

from oivae.data import (
    DataError,
    GroupedDataset,
    concat_datasets,
    generate_bars,
    load_grouped_csv,
    parse_manifest,
    split_rows,
    split_trials,
)
from oivae.model import GroupSpec


class TestBars:
    def test_shape_and_groups(self):
        ds = generate_bars(seed=0)
        assert ds.data.shape == (2048, 64)
        assert ds.groups.names == tuple(f"row{r}" for r in range(8))
        assert ds.groups.widths == (8,) * 8

    def test_noise_free_images(self):
        ds = generate_bars(n=50, noise_std=0.0, seed=1)
        rows = ds.provenance["bar_rows"]
        for img, r in zip(ds.data.reshape(50, 8, 8), rows):
            expected = np.zeros((8, 8))
            expected[r] = 0.5
            assert np.array_equal(img, expected)

    def test_noise_level(self):
        ds = generate_bars(n=4000, seed=2)
        clean = np.zeros((4000, 8, 8))
        clean[np.arange(4000), ds.provenance["bar_rows"]] = 0.5
        resid = ds.data - clean.reshape(4000, 64)
        assert abs(resid.std() - 0.05) < 0.001
        assert abs(resid.mean()) < 0.001

    def test_rows_roughly_uniform(self):
        n = 20000
        counts = np.bincount(generate_bars(n=n, seed=3).provenance["bar_rows"], minlength=8)
        sd = np.sqrt(n * (1 / 8) * (7 / 8))
        assert np.all(np.abs(counts - n / 8) < 4 * sd)

    def test_seed_reproducible(self):
        assert generate_bars(n=10, seed=5).data.tobytes() == generate_bars(n=10, seed=5).data.tobytes()
        assert not np.array_equal(generate_bars(n=10, seed=5).data, generate_bars(n=10, seed=6).data)

    def test_rejects_bad_side(self):
        with pytest.raises(ValueError):
            generate_bars(side=0)


class TestDataset:
    def test_width_mismatch(self):
        with pytest.raises(DataError, match="columns"):
            GroupedDataset(np.zeros((2, 3)), GroupSpec.single(4))

    def test_nonfinite(self):
        with pytest.raises(DataError, match="non-finite"):
            GroupedDataset(np.array([[np.nan]]), GroupSpec.single(1))

    def test_concat_requires_same_groups(self):
        a = GroupedDataset(np.zeros((1, 2)), GroupSpec.single(2))
        b = GroupedDataset(np.zeros((1, 2)), GroupSpec(("a", "b"), (1, 1)))
        with pytest.raises(DataError):
            concat_datasets([a, b])


class TestSplits:
    def test_bars_split_sizes(self):
        train, test = split_rows(generate_bars(seed=0), 0.9, seed=0)
        assert (len(train), len(test)) == (1843, 205)

    def test_split_is_a_partition(self):
        ds = GroupedDataset(np.arange(20.0)[:, None], GroupSpec.single(1))
        train, test = split_rows(ds, 0.75, seed=1)
        assert sorted(np.concatenate([train.data[:, 0], test.data[:, 0]])) == list(range(20))

    def test_degenerate_split(self):
        ds = GroupedDataset(np.zeros((3, 1)), GroupSpec.single(1))
        with pytest.raises(DataError, match="empty"):
            split_rows(ds, 0.1)

    def test_trials(self):
        trials = {i: GroupedDataset(np.full((2, 1), float(i)), GroupSpec.single(1)) for i in range(1, 4)}
        train, test = split_trials(trials, [1, 2], [3])
        assert train.data[:, 0].tolist() == [1, 1, 2, 2]
        assert test.data[:, 0].tolist() == [3, 3]

    @pytest.mark.parametrize(
        "train,test,msg", [([1], [1], "both"), ([], [1], "nonempty"), ([1], [9], "unknown")]
    )
    def test_trial_errors(self, train, test, msg):
        trials = {1: GroupedDataset(np.zeros((1, 1)), GroupSpec.single(1))}
        with pytest.raises(DataError, match=msg):
            split_trials(trials, train, test)


MANIFEST = "# regions\nleft: a, c\nright: b\n"


class TestCsv:
    def test_manifest(self):
        assert parse_manifest(MANIFEST) == [("left", ["a", "c"]), ("right", ["b"])]

    @pytest.mark.parametrize("text", ["", "# only\n", "nocolon\n", "g:\n"])
    def test_bad_manifest(self, text):
        with pytest.raises(DataError):
            parse_manifest(text)

    def test_reorders_columns(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,b,c\n1,2,3\n4,5,6\n")
        ds = load_grouped_csv(p, MANIFEST)
        assert ds.data.tolist() == [[1, 3, 2], [4, 6, 5]]
        assert ds.groups == GroupSpec(("left", "right"), (2, 1))

    def test_manifest_path(self, tmp_path):
        (tmp_path / "d.csv").write_text("a,b,c\n1,2,3\n")
        (tmp_path / "m.txt").write_text(MANIFEST)
        assert load_grouped_csv(tmp_path / "d.csv", tmp_path / "m.txt").data.shape == (1, 3)

    @pytest.mark.parametrize(
        "body,manifest,msg",
        [
            ("a,b,c\n1,x,3\n", MANIFEST, r"d.csv:2: non-numeric cell 'x' in column 'b'"),
            ("a,b,c\n1,2\n", MANIFEST, "d.csv:2: expected 3 cells"),
            ("a,b\n1,2\n", MANIFEST, "missing column 'c'"),
            ("a,b,c\n1,2,3\n", "l: a, b\nr: b, c\n", "both"),
            ("a,b,c,d\n1,2,3,4\n", MANIFEST, r"not assigned.*'d'"),
            ("", MANIFEST, "empty"),
        ],
    )
    def test_errors(self, tmp_path, body, manifest, msg):
        p = tmp_path / "d.csv"
        p.write_text(body)
        with pytest.raises(DataError, match=msg):
            load_grouped_csv(p, manifest)
