import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from basisflow import bases
from basisflow.bases import (
    NUM_BASES, analyze, build, build_uncached, evaluate_at, finite_difference_fields,
    flow_to_vector, householder_qr, normalized_grid, projection_error, synthesize,
    tangent_fields, vector_to_flow,
)
from basisflow.errors import DimensionMismatch
from basisflow.geometry import homography_to_flow, pixel_grid

from conftest import random_affine, random_homography


def test_tangent_fields_values():
    f = tangent_fields(9, 7)
    u, v = normalized_grid(9, 7)
    assert u[0, 0] == -1.0 and u[0, -1] == 1.0 and v[-1, 0] == 1.0
    assert np.array_equal(f[2, ..., 0], np.ones((7, 9))) and not f[2, ..., 1].any()
    assert np.array_equal(f[6, 3, 4], [0.0, 0.0])  # grid centre
    expected = [(u, 0 * u), (v, 0 * u), (1 + 0 * u, 0 * u), (0 * u, u), (0 * u, v),
                (0 * u, 1 + 0 * u), (-u * u, -u * v), (-u * v, -v * v)]
    for k, (ex, ey) in enumerate(expected):
        assert np.allclose(f[k, ..., 0], ex, atol=0) and np.allclose(f[k, ..., 1], ey, atol=0)


def test_finite_difference_fields():
    t = tangent_fields(15, 11)
    for eps in (1e-2, 1e-3):
        fd = finite_difference_fields(15, 11, eps)
        assert np.max(np.abs(fd[:6] - t[:6])) < 1e-9
    err = [np.max(np.abs(finite_difference_fields(15, 11, e)[6:] - t[6:])) for e in (1e-3, 1e-4)]
    assert err[0] < 2e-3 and err[1] < 2e-4
    assert 8 < err[0] / err[1] < 12  # first order in eps
    for bad in (0.0, -1e-3, 0.2):
        with pytest.raises(ValueError):
            finite_difference_fields(15, 11, bad)


def test_householder_qr_matches_numpy(rng):
    a = rng.normal(size=(200, 8))
    q, r = householder_qr(a)
    assert np.all(np.diag(r) > 0)
    assert np.allclose(np.tril(r, -1), 0)
    q2, r2 = np.linalg.qr(a)
    s = np.sign(np.diag(r2))
    assert np.allclose(q, q2 * s, atol=1e-12) and np.allclose(r, r2 * s[:, None], atol=1e-12)


@pytest.mark.parametrize("size", [(3, 3), (8, 8), (63, 48), (127, 127)])
def test_build_orthonormal_and_factorisation(size):
    b = build(*size)
    assert b.q.shape == (2 * size[0] * size[1], 8)
    assert np.max(np.abs(b.q.T @ b.q - np.eye(8))) < 1e-10
    assert np.all(np.diag(b.r) > 0) and np.allclose(np.tril(b.r, -1), 0)
    assert np.all(b.norms > 0)
    f = tangent_fields(*size)
    m = np.concatenate([f[..., 0].reshape(8, -1), f[..., 1].reshape(8, -1)], axis=1).T / b.norms
    assert np.max(np.abs(b.q @ b.r - m)) < 1e-9


def test_build_rejects_small_and_is_deterministic():
    with pytest.raises(ValueError):
        build(2, 10)
    a, b = build_uncached(40, 30), build_uncached(40, 30)
    assert np.array_equal(a.q, b.q) and np.array_equal(a.r, b.r)


def test_flatten_order():
    b = build(4, 3)
    flow = np.zeros((3, 4, 2))
    flow[1, 2, 0] = 1.5
    flow[2, 3, 1] = 1.0
    v = flow_to_vector(b, flow)
    sx, sy = b.scale
    assert v[1 * 4 + 2] == 1.5 / sx and v[12 + 2 * 4 + 3] == 1.0 / sy
    assert np.array_equal(vector_to_flow(b, v), flow)


def test_synthesize_analyze(rng):
    b = build(48, 32)
    assert not synthesize(b, np.zeros(8)).any()
    cols = b.columns()
    sx, sy = b.scale
    for k in range(8):
        f = synthesize(b, np.eye(8)[k])
        assert np.allclose(f[..., 0], cols[k, ..., 0] * sx) and np.allclose(f[..., 1], cols[k, ..., 1] * sy)
    alpha = rng.normal(size=8)
    a2, res = analyze(b, synthesize(b, alpha))
    assert np.max(np.abs(a2 - alpha)) < 1e-10 and res < 1e-10
    a0, r0 = analyze(b, np.zeros((32, 48, 2)))
    assert not a0.any() and r0 == 0.0
    with pytest.raises(DimensionMismatch):
        analyze(b, np.zeros((48, 32, 2)))


def test_affine_flows_lie_in_span(rng):
    b = build(50, 40)
    for _ in range(20):
        _, res = analyze(b, homography_to_flow(random_affine(rng, 50, 40, 8.0), 50, 40))
        assert res < 1e-9


def brute_force_residual(flow):
    """Least-squares fit of the 8 raw tangent fields in pixel units (independent of Q)."""
    h, w = flow.shape[:2]
    t = tangent_fields(w, h)
    a = np.concatenate([t[..., 0].reshape(8, -1), t[..., 1].reshape(8, -1)], axis=1).T
    sx, sy = (w - 1) / 2, (h - 1) / 2
    y = np.concatenate([flow[..., 0].ravel() / sx, flow[..., 1].ravel() / sy])
    coef, *_ = np.linalg.lstsq(a, y, rcond=None)
    return np.linalg.norm(y - a @ coef) / np.linalg.norm(y)


def test_small_baseline_projection_matches_oracle(rng):
    w, h = 96, 64
    b = build(w, h)
    for _ in range(10):
        f = homography_to_flow(random_homography(rng, w, h, 0.02 * h), w, h)
        _, res = analyze(b, f)
        assert res < 0.02
        assert abs(res - brute_force_residual(f)) < 1e-9
        assert np.max(np.abs(synthesize(b, analyze(b, f)[0]) - f)) / np.max(np.abs(f)) < 0.05


def test_residual_grows_quadratically(rng):
    w, h = 96, 64
    b = build(w, h)
    unit = rng.uniform(-1, 1, (4, 2))
    from conftest import corners
    from basisflow.geometry import dlt
    c = corners(w, h)
    errs = []
    for frac in (0.05, 0.1, 0.2, 0.25):
        f = homography_to_flow(dlt(c, c + unit * frac * h), w, h)
        errs.append(projection_error(b, f))
    assert all(e1 < e2 for e1, e2 in zip(errs, errs[1:]))
    assert errs[0] < errs[1] / 2 and errs[1] < errs[2] / 2


def test_evaluate_at_grid_and_off_grid(rng):
    w, h = 40, 30
    b = build(w, h)
    x, y = pixel_grid(w, h)
    pts = np.stack([x.ravel(), y.ravel()], axis=1)
    vals = evaluate_at(b, pts)
    n = w * h
    assert np.max(np.abs(vals[..., 0] - b.q[:n])) < 1e-9
    assert np.max(np.abs(vals[..., 1] - b.q[n:])) < 1e-9
    # off-grid: bilinear interpolation of the stored columns
    from basisflow._kernels import bilinear_sample_np
    p = rng.uniform([-19.5, -14.5], [19.5, 14.5], (1000, 2))
    jj, ii = p[:, 0] + (w - 1) / 2, p[:, 1] + (h - 1) / 2
    cols = b.columns()
    off = evaluate_at(b, p)
    for k in range(8):
        for c in range(2):
            ref, _ = bilinear_sample_np(cols[k, ..., c], jj, ii)
            assert np.max(np.abs(ref - off[:, k, c])) < 1e-3


def test_translation_basis_is_constant():
    # the first column in the translation pair (entry (1,3)) is a combination of
    # fields 1-3 only, but fields 1-2 are orthogonal to the constant on a centred
    # grid, so q_3 is exactly constant
    b = build(21, 17)
    p = np.array([[0.0, 0.0], [5.3, -2.1], [-9.9, 7.7]])
    v = evaluate_at(b, p)
    assert np.allclose(v[:, 2, 0], v[0, 2, 0], atol=1e-12) and np.allclose(v[:, 2, 1], 0, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(3, 40), st.integers(3, 40))
def test_orthonormality_property(w, h):
    b = build(w, h)
    assert np.max(np.abs(b.q.T @ b.q - np.eye(NUM_BASES))) < 1e-10


def test_basis_homography_affine_exact(rng):
    b = build(30, 20)
    h = random_affine(rng, 30, 20, 0.3)
    alpha, _ = analyze(b, homography_to_flow(h, 30, 20))
    assert np.max(np.abs(bases.basis_homography(b, alpha).m - h.m)) < 1e-9
