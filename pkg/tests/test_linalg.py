import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sharpcert.linalg import (
    InvalidInputError,
    affine_project,
    cokernel_rows,
    is_consistent,
    kernel_basis,
    pseudoinverse,
    restricted_smallest_gain,
    svd,
)

PHI_TOY = np.array([[1.0, 1.0, 0.0], [1.0, 0.0, -1.0]])
KER_TOY = np.array([1.0, -1.0, 1.0]) / np.sqrt(3)


def same_line(basis, direction):
    assert basis.shape == (direction.size, 1)
    assert abs(abs(basis[:, 0] @ direction) - 1.0) < 1e-12


class TestPseudoinverse:
    def test_identity(self):
        assert np.allclose(pseudoinverse(np.eye(3)), np.eye(3), atol=1e-15)

    def test_rank_deficient_diagonal(self):
        assert np.allclose(pseudoinverse([[2.0, 0.0], [0.0, 0.0]]), [[0.5, 0.0], [0.0, 0.0]])

    def test_wide_full_row_rank(self):
        expected = np.array([[1.0, 1.0], [2.0, -1.0], [1.0, -2.0]]) / 3.0
        pinv = pseudoinverse(PHI_TOY)
        assert np.allclose(pinv, expected, atol=1e-14)
        assert np.allclose(PHI_TOY @ pinv @ PHI_TOY, PHI_TOY, atol=1e-14)

    def test_rejects_non_finite(self):
        with pytest.raises(InvalidInputError):
            pseudoinverse(svd_input_with_nan())

    @pytest.mark.parametrize("seed", range(5))
    def test_penrose_identities(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((20, 30))
        if seed % 2:
            a = a[:, :12] @ rng.standard_normal((12, 30))  # rank 12
        p = pseudoinverse(a)
        tol = 1e-10 * np.linalg.norm(a, 2) * 30
        assert np.abs(a @ p @ a - a).max() <= tol
        assert np.abs(p @ a @ p - p).max() <= tol * np.linalg.norm(p, 2) ** 2
        assert np.abs((a @ p).T - a @ p).max() <= tol
        assert np.abs((p @ a).T - p @ a).max() <= tol


def svd_input_with_nan():
    return np.array([[1.0, np.nan], [0.0, 1.0]])


class TestKernels:
    def test_injective(self):
        assert kernel_basis(np.eye(3)).shape == (3, 0)

    def test_zero_map(self):
        k = kernel_basis(np.zeros((2, 3)))
        assert k.shape == (3, 3)
        assert np.allclose(k.T @ k, np.eye(3))

    def test_strong_toy_kernel(self):
        same_line(kernel_basis(PHI_TOY), KER_TOY)

    def test_sign_convention(self):
        k = kernel_basis(PHI_TOY)[:, 0]
        assert k[np.argmax(np.abs(k))] > 0

    def test_cokernel_identity(self):
        assert cokernel_rows(np.eye(3)).shape == (0, 3)

    def test_cokernel_single_row(self):
        n = cokernel_rows(np.array([[1.0, 0.0, 0.0]]))
        assert n.shape == (2, 3)
        assert np.allclose(n[:, 0], 0.0)
        assert np.allclose(n @ n.T, np.eye(2))

    def test_cokernel_strong_toy(self):
        same_line(cokernel_rows(PHI_TOY).T, KER_TOY)

    @pytest.mark.parametrize("shape,rank", [((20, 30), 20), ((20, 30), 7), ((30, 20), 20)])
    def test_orthonormal_and_annihilated(self, shape, rank):
        rng = np.random.default_rng(rank)
        a = rng.standard_normal((shape[0], rank)) @ rng.standard_normal((rank, shape[1]))
        k = kernel_basis(a)
        assert k.shape == (shape[1], shape[1] - rank)
        assert np.abs(k.T @ k - np.eye(k.shape[1])).max(initial=0.0) <= 1e-12
        assert np.abs(a @ k).max(initial=0.0) <= 1e-10 * np.linalg.norm(a, 2)

    def test_rank_is_relative(self):
        # a uniformly tiny matrix keeps its full rank
        assert svd(1e-12 * np.eye(3)).rank == 3
        assert svd(np.diag([1.0, 1e-11])).rank == 1


class TestAffineProjection:
    def test_feasible_point_fixed(self):
        x = np.array([0.0, 1.0, 0.0]) + 0.7 * KER_TOY
        assert np.allclose(affine_project(x, PHI_TOY, [0.0, 1.0, 0.0]), x, atol=1e-15)

    def test_reference_fixed(self):
        ref = np.array([0.0, 1.0, 0.0])
        assert np.allclose(affine_project(ref, PHI_TOY, ref), ref)

    def test_hand_example(self):
        p = affine_project([1.0, 0.0, 0.0], PHI_TOY, [0.0, 1.0, 0.0])
        assert np.allclose(p, [2 / 3, 1 / 3, 2 / 3], atol=1e-14)
        assert np.allclose(PHI_TOY @ p, [1.0, 0.0], atol=1e-14)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, 3, elements=st.floats(-1e3, 1e3)))
    def test_idempotent(self, x):
        ref = np.array([0.0, 1.0, 0.0])
        p = affine_project(x, PHI_TOY, ref)
        assert np.abs(affine_project(p, PHI_TOY, ref) - p).max() <= 1e-12 * max(1.0, np.abs(x).max())


class TestRestrictedGain:
    def test_identity(self):
        assert restricted_smallest_gain(np.eye(3), np.eye(3)) == pytest.approx(1.0)

    def test_empty_subspace(self):
        assert restricted_smallest_gain(np.eye(3), np.zeros((3, 0))) == np.inf

    def test_strong_toy_gain(self):
        b = np.diag([0.0, 0.0, 1.0])
        assert restricted_smallest_gain(b, KER_TOY[:, None]) == pytest.approx(1 / np.sqrt(3), abs=1e-15)

    @pytest.mark.parametrize("seed", range(10))
    def test_squared_gain_is_least_eigenvalue(self, seed):
        rng = np.random.default_rng(seed)
        b = rng.standard_normal((8, 12))
        k, _ = np.linalg.qr(rng.standard_normal((12, 5)))
        bk = b @ k
        lam = np.linalg.eigvalsh(bk.T @ bk)[0]
        assert restricted_smallest_gain(b, k) ** 2 == pytest.approx(lam, abs=1e-10)


def test_consistency_test():
    a = np.array([[1.0, 0.0], [0.0, 0.0]])
    assert is_consistent(a, [2.0, 0.0])
    assert not is_consistent(a, [2.0, 1.0])
