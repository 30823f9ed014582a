import numpy as np
import pytest

from oivae import evaluate as ev
from oivae.data import GroupedDataset
from oivae.model import ArchitectureSpec, GroupSpec

from conftest import ARCHS, make_params, whitened_eps

HALF_LOG_2PI = 0.5 * np.log(2 * np.pi)


def _matrix(values, names=None):
    values = np.asarray(values, dtype=float)
    names = names or tuple(f"g{i}" for i in range(values.shape[0]))
    return ev.WeightNormMatrix(values, names)


class TestWeightNorms:
    def test_matrix(self, small_groups):
        p = make_params(small_groups, ARCHS["tanh"])
        m = ev.weight_norm_matrix(p)
        assert m.shape == (3, 4)
        np.testing.assert_allclose(m.values[1], np.linalg.norm(p.W[1], axis=0))
        assert m.group_names == ("a", "b", "c")

    def test_top_k_with_ties(self):
        m = _matrix([[1.0, 0.0], [3.0, 0.0], [1.0, 0.0]])
        top = ev.top_groups_per_dim(m, 2)
        assert top[0] == [("g1", 3.0), ("g0", 1.0)]
        assert top[1] == [("g0", 0.0), ("g1", 0.0)]

    @pytest.mark.parametrize("k", [0, 4])
    def test_top_k_range(self, k):
        with pytest.raises(ValueError, match="k must lie"):
            ev.top_groups_per_dim(_matrix(np.ones((3, 2))), k)

    def test_matching_prefers_total_norm(self):
        # greedy would give dim0 -> g0 and leave dim1 on g1 (total 1.0 < 1.4)
        m = _matrix([[1.0, 0.9], [0.5, 0.0]])
        assert ev.match_dimensions(m) == {0: 1, 1: 0}

    def test_matching_subset(self):
        m = _matrix(np.eye(3)[:, [2, 0, 1]])
        assert ev.match_dimensions(m, dims=[1, 2]) == {1: 0, 2: 1}


def _exact_linear_model():
    """One group, identity generator: the marginal likelihood is Gaussian.

    With ``W = a Q`` for orthonormal ``Q`` and isotropic noise ``s``, the true
    posterior is ``N(W^T x / (a^2 + s^2), s^2 / (a^2 + s^2) I)``, which a
    linear encoder represents exactly.
    """
    rng = np.random.default_rng(0)
    d, k, a, s = 3, 2, 1.5, 0.4
    Q, _ = np.linalg.qr(rng.normal(size=(d, k)))
    W = a * Q
    params = make_params(GroupSpec.single(d), ArchitectureSpec(k, d, (), ()))
    params.W = [W]
    params.log_noise = [np.full(d, np.log(s))]
    post_var = s**2 / (a**2 + s**2)
    params.phi["mu.weight"] = W.T / (a**2 + s**2)
    params.phi["mu.bias"] = np.zeros(k)
    params.phi["logsigma.weight"] = np.zeros((k, d))
    params.phi["logsigma.bias"] = np.full(k, 0.5 * np.log(post_var))
    cov = W @ W.T + s**2 * np.eye(d)
    return params, cov, rng


class TestLikelihood:
    def test_elbo_equals_marginal_when_posterior_is_exact(self):
        params, cov, rng = _exact_linear_model()
        x = rng.normal(size=(5, 3))
        _, logdet = np.linalg.slogdet(cov)
        exact = -0.5 * np.einsum("ni,ij,nj->n", x, np.linalg.inv(cov), x) - 0.5 * logdet - 3 * HALF_LOG_2PI
        # with the exact posterior the bound is tight; whitened draws make the
        # quadratic reconstruction term equal its expectation
        eps = whitened_eps(rng, 40, 5, 2)
        vals = ev.per_datum_elbo(params, x, std_floor=0.0, eps=eps)
        np.testing.assert_allclose(vals, exact, atol=1e-10)

    def test_total_is_sum_of_parts(self, small_groups, rng):
        p = make_params(small_groups, ARCHS["tanh"])
        data = rng.normal(size=(6, 6))
        ds = GroupedDataset(data, small_groups)
        eps = np.random.default_rng(9).standard_normal((1, 6, 4))
        full = ev.per_datum_elbo(p, data, eps=eps)
        parts = np.concatenate([ev.per_datum_elbo(p, data[:2], eps=eps[:, :2]), ev.per_datum_elbo(p, data[2:], eps=eps[:, 2:])])
        np.testing.assert_allclose(full, parts, atol=1e-12)
        total, mean = ev.test_loglik(p, ds, rng=np.random.default_rng(9))
        assert total == pytest.approx(full.sum(), abs=1e-9)
        assert mean == pytest.approx(total / 6)

    def test_group_mismatch(self, small_groups):
        p = make_params(small_groups, ARCHS["tanh"])
        ds = GroupedDataset(np.zeros((1, 6)), GroupSpec.single(6))
        with pytest.raises(ValueError, match="groups"):
            ev.test_loglik(p, ds)

    def test_reconstruction_error_zero_for_exact_identity(self):
        params = make_params(GroupSpec.single(2), ArchitectureSpec(2, 2, (), ()))
        params.W = [np.eye(2)]
        params.phi["mu.weight"] = np.eye(2)
        params.phi["mu.bias"] = np.zeros(2)
        assert ev.reconstruction_error(params, np.arange(6.0).reshape(3, 2)) == 0.0


class TestExports:
    def test_weight_norms_round_trip(self, tmp_path, small_groups):
        m = ev.weight_norm_matrix(make_params(small_groups, ARCHS["tanh"]))
        ev.export_weight_norms(m, tmp_path / "w.csv")
        back = ev.import_weight_norms(tmp_path / "w.csv")
        assert back.group_names == m.group_names
        assert back.values.tobytes() == m.values.tobytes()

    def test_rankings_csv(self, tmp_path):
        ev.export_rankings(_matrix([[1.0, 0.5], [2.0, 0.25]]), 1, tmp_path / "r.csv")
        assert (tmp_path / "r.csv").read_text() == "dim,rank,group,norm\n0,1,g1,2.0\n1,1,g0,0.5\n"

    def test_samples_csv(self, tmp_path):
        ev.export_samples([[1.0, 2.0]], [[0.5]], ["a[0]", "a[1]"], tmp_path / "s.csv")
        assert (tmp_path / "s.csv").read_text() == "a[0],a[1],z0\n1.0,2.0,0.5\n"

    def test_column_labels(self):
        assert ev.column_labels(GroupSpec(("a", "b"), (2, 1))) == ["a[0]", "a[1]", "b[0]"]

    def test_unwritable(self, tmp_path):
        (tmp_path / "f").write_text("")
        with pytest.raises(OSError, match="cannot write"):
            ev.export_rankings(_matrix([[1.0]]), 1, tmp_path / "f" / "r.csv")
