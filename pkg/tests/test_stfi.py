import numpy as np
import pytest

import oracles
from oracles import randomize
from qstar.nn import ParamFactory
from qstar.stfi import StiParams, TfiParams, frequency_attention, sti_forward, temporal_interaction, tfi_forward
from qstar.tensor import ShapeError, Tensor

T, M, F, N, D, H = 5, 3, 4, 3, 8, 2


@pytest.mark.parametrize("seed", range(5))
def test_sti_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    p = randomize(StiParams.init(ParamFactory(seed), D, H), rng)
    F_p, F_aq, F_vq = rng.standard_normal((2, T, M, D)), rng.standard_normal((2, T, D)), rng.standard_normal((2, T, D))
    got = sti_forward(Tensor(F_p), Tensor(F_aq), Tensor(F_vq), p).data
    assert got.shape == (2, T, D)
    for b in range(2):
        np.testing.assert_allclose(got[b], oracles.sti(F_p[b], F_aq[b], F_vq[b], p), atol=1e-10, rtol=0)


@pytest.mark.parametrize("seed", range(5))
def test_tfi_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    p = randomize(TfiParams.init(ParamFactory(seed), D), rng)
    F_ast, F_aq, F_w = rng.standard_normal((2, T, F, D)), rng.standard_normal((2, T, D)), rng.standard_normal((2, N, D))
    got = tfi_forward(Tensor(F_ast), Tensor(F_aq), Tensor(F_w), p).data
    assert got.shape == (2, T, D)
    for b in range(2):
        np.testing.assert_allclose(got[b], oracles.tfi(F_ast[b], F_aq[b], F_w[b], p), atol=1e-10, rtol=0)


@pytest.mark.parametrize("seed", range(5))
def test_band_weights_match_oracle_and_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    p = randomize(TfiParams.init(ParamFactory(seed), D), rng)
    F_ast, F_w = rng.standard_normal((T, F, D)), rng.standard_normal((N, D))
    a_f, weighted = frequency_attention(Tensor(F_ast), Tensor(F_w), p)
    np.testing.assert_allclose(a_f.data, oracles.band_weights(F_ast, F_w, p), atol=1e-12)
    assert a_f.data.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(weighted.data, F_ast * a_f.data[None, :, None], atol=1e-12)


def test_question_term_is_shared_by_all_bands():
    rng = np.random.default_rng(5)
    p = TfiParams.init(ParamFactory(5), D)
    F_ast = rng.standard_normal((T, F, D))
    with_q, _ = frequency_attention(Tensor(F_ast), Tensor(rng.standard_normal((N, D))), p)
    without, _ = frequency_attention(Tensor(F_ast), None, p)
    np.testing.assert_allclose(with_q.data, without.data, atol=1e-14)


def test_removed_question_term_has_no_weight():
    p = TfiParams.init(ParamFactory(0), D, question_term=False)
    assert p.w1 is None


def test_temporal_interaction_is_a_column_mixture():
    rng = np.random.default_rng(6)
    F_aq, F_vq = rng.standard_normal((T, D)), rng.standard_normal((T, D))
    got = temporal_interaction(Tensor(F_aq), Tensor(F_vq)).data
    corr = F_aq.T @ F_vq
    corr = np.exp(corr - corr.max(axis=1, keepdims=True))
    corr /= corr.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(got, F_vq @ corr, atol=1e-12)


def test_segment_count_mismatch_is_rejected():
    p = StiParams.init(ParamFactory(0), D, H)
    with pytest.raises(ShapeError):
        sti_forward(Tensor(np.zeros((T, M, D))), Tensor(np.zeros((T - 1, D))), Tensor(np.zeros((T, D))), p)
    q = TfiParams.init(ParamFactory(0), D)
    with pytest.raises(ShapeError):
        tfi_forward(Tensor(np.zeros((T + 1, F, D))), Tensor(np.zeros((T, D))), None, q)


def test_tfi_hidden_width_must_be_positive():
    with pytest.raises(ShapeError):
        TfiParams.init(ParamFactory(0), D, hidden=0)


def test_single_patch_pooling_is_identity():
    from qstar.nn import cross_attention, ffn, self_attention
    from qstar import tensor as tn

    rng = np.random.default_rng(17)
    p = StiParams.init(ParamFactory(17), D, H)
    F_p, F_aq, F_vq = rng.standard_normal((T, 1, D)), rng.standard_normal((T, D)), rng.standard_normal((T, D))
    rows = [cross_attention(self_attention(Tensor(F_p[t]), p.sa_p), Tensor(F_aq), p.ca_sp).data[0] for t in range(T)]
    want = ffn(tn.concat([Tensor(np.stack(rows)), temporal_interaction(Tensor(F_aq), Tensor(F_vq))], axis=-1), p.ffn_fuse).data
    np.testing.assert_allclose(sti_forward(Tensor(F_p), Tensor(F_aq), Tensor(F_vq), p).data, want, atol=1e-12)


def test_temporal_correlation_rows_sum_to_one():
    from qstar import tensor as tn

    rng = np.random.default_rng(18)
    F_aq, F_vq = Tensor(rng.standard_normal((T, D))), Tensor(rng.standard_normal((T, D)))
    corr = tn.softmax(tn.matmul(tn.swapaxes(F_aq, -1, -2), F_vq), axis=-1).data
    np.testing.assert_allclose(corr.sum(axis=-1), 1.0, atol=1e-12)


def test_identical_bands_get_uniform_weights():
    rng = np.random.default_rng(19)
    p = TfiParams.init(ParamFactory(19), D)
    row = rng.standard_normal((T, 1, D))
    a_f, _ = frequency_attention(Tensor(np.repeat(row, F, axis=1)), Tensor(rng.standard_normal((N, D))), p)
    np.testing.assert_allclose(a_f.data, 1 / F, atol=1e-15)


def _positive_tfi(seed):
    rng = np.random.default_rng(seed)
    p = TfiParams.init(ParamFactory(seed), D)
    p.w3.data = np.abs(rng.standard_normal(p.w3.shape))
    p.w2.data = np.abs(rng.standard_normal(p.w2.shape))
    return p, rng


def test_dominant_band_zeroes_the_rest():
    p, rng = _positive_tfi(20)
    F_ast = rng.standard_normal((T, F, D))
    F_ast[:, 2] = 50.0
    a_f, weighted = frequency_attention(Tensor(F_ast), None, p)
    assert a_f.data[2] == 1.0
    assert np.all(weighted.data[:, [0, 1, 3]] == 0)


def test_scaling_a_band_raises_its_weight():
    p, rng = _positive_tfi(21)
    p.w2.data *= 0.02
    F_ast = np.abs(rng.standard_normal((T, F, D)))
    prev = 0.0
    for factor in (1.0, 1.5, 2.0, 3.0):
        x = F_ast.copy()
        x[:, 1] *= factor
        a_f, _ = frequency_attention(Tensor(x), None, p)
        assert a_f.data[1] > prev
        prev = a_f.data[1]
    assert prev < 1.0


def test_single_band_and_zero_band_features():
    from qstar.nn import conv_block
    from qstar import tensor as tn

    rng = np.random.default_rng(22)
    p = TfiParams.init(ParamFactory(22), D)
    p.conv.bn1.training = p.conv.bn2.training = False
    F_ast, F_aq = rng.standard_normal((T, 1, D)), rng.standard_normal((T, D))
    want = conv_block(tn.concat([Tensor(F_ast[:, 0]), Tensor(F_aq)], axis=-1), p.conv).data
    np.testing.assert_allclose(tfi_forward(Tensor(F_ast), Tensor(F_aq), None, p).data, want, atol=1e-12)
    want = conv_block(tn.concat([Tensor(np.zeros((T, D))), Tensor(F_aq)], axis=-1), p.conv).data
    np.testing.assert_allclose(tfi_forward(Tensor(np.zeros((T, F, D))), Tensor(F_aq), None, p).data, want, atol=1e-12)
