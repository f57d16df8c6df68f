import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hpm.numeric import ConfigError, Tensor
from hpm.objective import ablation_mask, bpr_loss, cosine_matrix, cosine_sim, dcl_loss, joint_loss, score


def infonce_row(sims, i):
    return -math.log(math.exp(sims[i]) / sum(math.exp(s) for s in sims))


def test_cosine_examples():
    assert cosine_sim([0.3, 4.0], [0.3, 4.0]) == pytest.approx(1.0, abs=1e-12)
    assert cosine_sim([1, 0], [0, 1]) == 0.0
    assert abs(cosine_sim([1, 0], [1, 1]) - 0.707107) < 1e-6


def test_cosine_matrix_matches_pairwise(rng):
    u, t = rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
    m = cosine_matrix(u, t).data
    for i in range(4):
        for j in range(4):
            assert m[i, j] == pytest.approx(cosine_sim(u[i], t[j]), abs=1e-12)


def test_dcl_single_example_is_zero():
    assert dcl_loss(np.array([[1.0, 2.0]]), np.array([[-3.0, 1.0]])).item() == 0.0


def test_dcl_two_equal_similarities_is_log2():
    u = np.array([[1.0, 0.0], [0.0, 1.0]])
    t = np.array([[1.0, 1.0], [1.0, 1.0]])
    assert dcl_loss(u, t).item() == pytest.approx(math.log(2), abs=1e-12)


def test_dcl_three_examples_against_scalar_oracle():
    # similarity rows (1; 0, -1), (1; 0, 0), (1; -1, 0)
    u = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    t = u.copy()
    row0 = infonce_row([1.0, 0.0, -1.0], 0)
    assert abs(row0 - 0.407606) < 1e-6
    expected = (row0 + infonce_row([0.0, 1.0, 0.0], 1) + infonce_row([-1.0, 0.0, 1.0], 2)) / 3
    assert dcl_loss(u, t).item() == pytest.approx(expected, abs=1e-12)


@given(arrays(np.float64, (4, 3), elements=st.floats(-3, 3)), arrays(np.float64, (4, 3), elements=st.floats(-3, 3)),
       st.integers(0, 3), st.floats(0.1, 10))
@settings(max_examples=60, deadline=None)
def test_dcl_nonnegative_and_scale_invariant(u, t, i, c):
    u = u + np.eye(4, 3)
    t = t + np.eye(4, 3)
    base = dcl_loss(u, t).item()
    assert base >= 0
    u2 = u.copy()
    u2[i] *= 3.0
    t2 = t.copy()
    t2[(i + 1) % 4] *= c
    assert dcl_loss(u2, t2).item() == pytest.approx(base, rel=1e-9, abs=1e-12)


def test_score_examples():
    v, c = np.array([[1.0, 2.0]]), np.array([[3.0, -1.0]])
    assert score(v, c, np.zeros((1, 2)), np.zeros((1, 2))).data.tolist() == [0.0]
    assert score(v, c, np.array([[0.5, 1.0]]), np.zeros((1, 2))).data.tolist() == [2.5]
    assert score(v, c, np.array([[0.5, 1.0]]), np.array([[1.0, 1.0]])).data.tolist() == [4.5]
    many = score(v, c, np.array([[[1.0, 0.0], [0.0, 1.0]]]), np.zeros((1, 2, 2))).data
    assert many.tolist() == [[1.0, 2.0]]


def test_bpr_examples():
    assert bpr_loss(np.array([1.5]), np.array([1.5])).item() == pytest.approx(math.log(2), abs=1e-15)
    assert bpr_loss(np.array([20.0]), np.array([0.0])).item() < 1e-8
    assert abs(bpr_loss(np.array([1.0]), np.array([0.0])).item() - 0.313262) < 1e-6
    assert math.isfinite(bpr_loss(np.array([-800.0]), np.array([800.0])).item())


@given(st.lists(st.integers(-3000, 3000), min_size=2, max_size=10, unique=True))
def test_bpr_strictly_decreasing(steps):
    diffs = [k / 100 for k in sorted(steps)]
    vals = [bpr_loss(np.array([d]), np.array([0.0])).item() for d in diffs]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_joint_loss_examples():
    t, bd = joint_loss(Tensor(2.0), Tensor(1.5), Tensor(2.5), lam=0.5)
    assert t.item() == 4.0 and bd.cl == 4.0 and bd.joint == 4.0 and bd.lam == 0.5
    t, bd = joint_loss(Tensor(2.0), Tensor(1.5), Tensor(2.5), lam=0.0)
    assert t.item() == 2.0 == bd.rec == bd.joint
    t, bd = joint_loss(Tensor(2.0), Tensor(1.5), Tensor(2.5))
    assert t.item() == 6.0 and bd.lam == 1.0
    with pytest.raises(ConfigError):
        joint_loss(Tensor(1.0), Tensor(1.0), Tensor(1.0), lam=-1)


def test_ablation_masks():
    full = ablation_mask("full")
    assert full.use_scel and full.use_dcl and full.dual_stream
    assert not ablation_mask("no-dcl").use_dcl and not ablation_mask("no-scel").use_scel
    assert not ablation_mask("single-stream").dual_stream
    with pytest.raises(ConfigError):
        ablation_mask("HPM-X")
