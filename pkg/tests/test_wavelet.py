import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from agcnet.graph import build_from_edge_list, eigendecompose, cycle_graph, path_graph, random_connected_graph, spectrum_of
from agcnet.wavelet import (
    ScaleOverflowError,
    ScaleSet,
    SpectralBases,
    basis_scale_gradient,
    build_basis,
    heat_filter,
    sparsify,
)


def test_heat_filter_values():
    lam = np.array([0.0, 0.7, 2.0])
    np.testing.assert_array_equal(heat_filter(lam, 0.0), np.ones(3))
    assert heat_filter(np.array([2.0]), 0.5)[0] == pytest.approx(math.exp(-1.0), abs=1e-15)
    assert heat_filter(np.array([2.0]), 0.5)[0] == pytest.approx(0.367879, abs=1e-6)
    prod = heat_filter(lam, 1.3, "forward") * heat_filter(lam, 1.3, "inverse")
    np.testing.assert_allclose(prod, 1.0, atol=1e-12)


@pytest.mark.parametrize("bad", [math.inf, math.nan, -1.0])
def test_heat_filter_rejects_bad_scale(bad):
    with pytest.raises(ScaleOverflowError):
        heat_filter(np.array([1.0]), bad)


def test_heat_filter_direction():
    with pytest.raises(ValueError):
        heat_filter(np.array([1.0]), 1.0, "sideways")


def test_zero_scale_is_identity():
    b = build_basis(spectrum_of(path_graph(4)), 0.0)
    np.testing.assert_allclose(b.forward, np.eye(4), atol=1e-14)
    np.testing.assert_allclose(b.inverse, np.eye(4), atol=1e-14)


@pytest.mark.parametrize("s", [0.1, 0.5, 1.0, 2.0, 5.0])
def test_p3_invertible(s):
    b = build_basis(spectrum_of(path_graph(3)), s)
    assert np.max(np.abs(b.forward @ b.inverse - np.eye(3))) < 1e-8


def test_rows_sum_to_one_on_regular_graph():
    b = build_basis(spectrum_of(cycle_graph(4)), 0.8)
    np.testing.assert_allclose(b.forward.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(b.inverse.sum(axis=1), 1.0, atol=1e-10)


def test_overflow_guard():
    spec = spectrum_of(path_graph(3))  # lambda_max = 2
    build_basis(spec, 15.0)
    with pytest.raises(ScaleOverflowError):
        build_basis(spec, 15.5)
    with pytest.raises(ScaleOverflowError):
        basis_scale_gradient(spec, 16.0)


def test_sparsify():
    spec = spectrum_of(path_graph(3))
    dense = build_basis(spec, 0.001)
    assert sparsify(dense, 0.0) is dense
    big = sparsify(dense, 10.0)
    assert not big.forward.any() and not big.inverse.any()
    sp = sparsify(dense, 1e-4)
    assert sp.sparsity_threshold == 1e-4
    local = np.array([[1, 1, 0], [1, 1, 1], [0, 1, 1]], dtype=bool)
    # dense two-hop entries are O(s^2), below the threshold; one-hop entries are O(s)
    assert abs(dense.forward[0, 2]) < 1e-4 < abs(dense.forward[0, 1])
    np.testing.assert_array_equal(sp.forward != 0, local)
    np.testing.assert_array_equal(sp.forward[local], dense.forward[local])
    with pytest.raises(ValueError):
        sparsify(dense, -1.0)


def test_locality_grows_with_scale():
    spec = spectrum_of(path_graph(4))
    small, large = build_basis(spec, 0.1), build_basis(spec, 1.0)
    for i, j in [(0, 2), (0, 3), (1, 3)]:
        assert abs(small.forward[i, j]) <= abs(large.forward[i, j])


def test_scale_gradient_zero_on_zero_spectrum():
    # an edgeless graph has L' = I under the isolated-node rule, so build the all-zero spectrum directly
    assert np.all(spectrum_of(build_from_edge_list([], 3)).eigenvalues == 1.0)
    spec = eigendecompose(np.zeros((3, 3)))
    d_fwd, d_inv = basis_scale_gradient(spec, 0.7)
    assert not d_fwd.any() and not d_inv.any()


@pytest.mark.parametrize("graph", [path_graph(3), cycle_graph(5), random_connected_graph(8, np.random.default_rng(3))])
@pytest.mark.parametrize("s", [0.1, 0.5, 1.0, 2.0])
def test_scale_gradient_matches_central_difference(graph, s):
    spec = spectrum_of(graph)
    h = 1e-6
    d_fwd, d_inv = basis_scale_gradient(spec, s)
    fd_fwd = (build_basis(spec, s + h).forward - build_basis(spec, s - h).forward) / (2 * h)
    fd_inv = (build_basis(spec, s + h).inverse - build_basis(spec, s - h).inverse) / (2 * h)
    for a, b in [(d_fwd, fd_fwd), (d_inv, fd_inv)]:
        rel = np.linalg.norm(a - b) / np.linalg.norm(b)
        assert rel < 1e-5
        assert np.max(np.abs(a - a.T)) < 1e-10


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 20), seed=st.integers(0, 2**32 - 1))
def test_invertibility_random_graphs(n, seed):
    spec = spectrum_of(random_connected_graph(n, np.random.default_rng(seed)))
    for s in (0.1, 0.5, 1.0, 2.0):
        b = build_basis(spec, s)
        assert np.all(np.isfinite(b.forward)) and np.all(np.isfinite(b.inverse))
        assert np.max(np.abs(b.forward @ b.inverse - np.eye(n))) < 1e-8


def test_scale_set_init_and_reparameterization():
    ss = ScaleSet(5)
    s = ss.scales().detach().numpy()
    np.testing.assert_allclose(s, np.geomspace(0.1, 2.0, 5), rtol=1e-12)
    raw = ss.raw_params.detach().numpy()
    np.testing.assert_allclose(s, np.log1p(np.exp(raw)), rtol=1e-14)
    np.testing.assert_array_equal(ss.scales().detach().numpy(), s)
    assert ScaleSet(1).k == 1 and ScaleSet(1).scales().item() > 0
    with pytest.raises(ValueError):
        ScaleSet(0)


def test_torch_bases_match_numpy():
    spec = spectrum_of(random_connected_graph(7, np.random.default_rng(0)))
    scales = torch.tensor([0.2, 1.5], dtype=torch.float64)
    fwd, inv = SpectralBases(spec)(scales)
    for i, s in enumerate([0.2, 1.5]):
        b = build_basis(spec, s)
        np.testing.assert_allclose(fwd[i].numpy(), b.forward, atol=1e-12)
        np.testing.assert_allclose(inv[i].numpy(), b.inverse, atol=1e-11)


def test_torch_bases_overflow_guard():
    bases = SpectralBases(spectrum_of(path_graph(3)))
    with pytest.raises(ScaleOverflowError):
        bases(torch.tensor([20.0], dtype=torch.float64))
