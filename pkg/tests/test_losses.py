import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmjivnet import autodiff as ad
from cmjivnet.autodiff import Tape, Tensor, backward
from cmjivnet.encoders import GaussianLatent
from cmjivnet.fusion import LatentTriple
from cmjivnet.losses import (
    LossParts,
    LossWeights,
    MineCritic,
    kl_std_normal,
    mine_lower_bound,
    orthogonality_loss,
    recon_loss_fc,
    recon_loss_sc,
    supervised_loss,
    total_loss,
)


def _gaussian(rng, b, d):
    return GaussianLatent(
        mu=Tensor(rng.normal(size=(b, d)).astype(np.float64)),
        logvar=Tensor(rng.uniform(-1.5, 1.0, size=(b, d)).astype(np.float64)),
    )


def test_kl_closed_form_matches_monte_carlo():
    rng = np.random.default_rng(3)
    n = 100_000
    for _ in range(20):
        d = int(rng.integers(2, 12))
        mu = rng.normal(scale=1.2, size=d)
        logvar = rng.uniform(-2.0, 1.5, size=d)
        g = GaussianLatent(mu=Tensor(mu[None, :]), logvar=Tensor(logvar[None, :]))
        closed = float(kl_std_normal(g).data)

        sd = np.exp(logvar / 2)
        z = mu + sd * rng.standard_normal((n, d))
        log_q = -0.5 * (((z - mu) / sd) ** 2 + np.log(2 * np.pi) + logvar).sum(axis=1)
        log_p = -0.5 * (z ** 2 + np.log(2 * np.pi)).sum(axis=1)
        mc = float((log_q - log_p).mean())
        assert closed == pytest.approx(mc, rel=0.02)


def test_kl_zero_for_standard_normal_posterior():
    g = GaussianLatent(mu=Tensor(np.zeros((4, 8))), logvar=Tensor(np.zeros((4, 8))))
    assert float(kl_std_normal(g).data) == pytest.approx(0.0, abs=1e-12)


def test_kl_is_batch_mean_not_sum():
    rng = np.random.default_rng(0)
    one = _gaussian(rng, 1, 6)
    stacked = GaussianLatent(
        mu=Tensor(np.repeat(one.mu.data, 5, axis=0)),
        logvar=Tensor(np.repeat(one.logvar.data, 5, axis=0)),
    )
    assert float(kl_std_normal(stacked).data) == pytest.approx(float(kl_std_normal(one).data))


def test_poisson_loss_matches_full_nll_minus_constant():
    rng = np.random.default_rng(11)
    from scipy.special import gammaln

    x = rng.poisson(5.0, size=(1, 1000)).astype(np.float64)
    lam = rng.uniform(0.5, 20.0, size=(1, 1000))
    ours = float(recon_loss_sc(Tensor(x), Tensor(lam)).data)
    full_nll = float((lam - x * np.log(lam) + gammaln(x + 1.0)).sum())
    const = float(gammaln(x + 1.0).sum())
    assert abs(ours - (full_nll - const)) < 1e-10


def test_poisson_loss_rejects_nonpositive_rates():
    x = Tensor(np.ones((1, 3)))
    with pytest.raises(ValueError):
        recon_loss_sc(x, Tensor(np.array([[1.0, 0.0, 2.0]])))


def test_fc_loss_is_summed_squares_batch_mean():
    x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
    mu = Tensor(np.array([[0.0, 0.0], [0.0, 0.0]]))
    # per-sample sums: 5 and 25, mean 15
    assert float(recon_loss_fc(x, mu).data) == pytest.approx(15.0)


def test_orthogonality_zero_for_orthogonal_vectors():
    a = np.array([[1.0, 0.0, 0.0]])
    b = np.array([[0.0, 1.0, 0.0]])
    c = np.array([[0.0, 0.0, 1.0]])
    val = float(orthogonality_loss(Tensor(a), Tensor(b), Tensor(c)).data)
    assert val == pytest.approx(0.0, abs=1e-12)


def test_orthogonality_three_for_identical_vectors():
    v = np.array([[0.3, -0.7, 0.2]])
    val = float(orthogonality_loss(Tensor(v), Tensor(v), Tensor(v)).data)
    assert val == pytest.approx(3.0, rel=1e-5)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_orthogonality_bounded(seed):
    rng = np.random.default_rng(seed)
    vecs = [Tensor(rng.normal(size=(3, 5)).astype(np.float64)) for _ in range(3)]
    val = float(orthogonality_loss(*vecs).data)
    assert -1e-9 <= val <= 3.0 + 1e-9


def test_total_loss_weighted_sum():
    parts = LossParts(
        fc=Tensor(np.float64(1.0)), sc=Tensor(np.float64(1.0)),
        kl_enc=Tensor(np.float64(1.0)), kl_fusion=Tensor(np.float64(1.0)),
        mi=Tensor(np.float64(1.0)), ortho=Tensor(np.float64(1.0)),
    )
    w = LossWeights(fc=1.0, sc=1.0, fusion=1.0, mi=1.0, ortho=1.0)
    assert float(total_loss(parts, w).data) == pytest.approx(6.0)
    w2 = LossWeights(fc=2.0, sc=0.5, fusion=3.0, mi=0.25, ortho=4.0)
    assert float(total_loss(parts, w2).data) == pytest.approx(2.0 + 0.5 + 1.0 + 3.0 + 0.25 + 4.0)


def test_total_loss_rejects_nonfinite_term():
    parts = LossParts(
        fc=Tensor(np.float64(np.nan)), sc=Tensor(np.float64(1.0)),
        kl_enc=Tensor(np.float64(1.0)), kl_fusion=Tensor(np.float64(1.0)),
        mi=Tensor(np.float64(1.0)), ortho=Tensor(np.float64(1.0)),
    )
    with pytest.raises(FloatingPointError, match="fc"):
        total_loss(parts, LossWeights())


def test_loss_weights_validate_positive():
    with pytest.raises(ValueError, match="sc"):
        LossWeights(sc=0.0).validate()
    LossWeights().validate()


def test_mine_bound_zero_at_init_with_ma_seeding():
    # With the moving average seeded from the first batch, the bound value
    # is E[T] - log(mean e^T) computed exactly; an untrained critic on any
    # data should give a value close to 0 but the gradient must be finite.
    rng = np.random.default_rng(5)
    critic = MineCritic(rng, d_z=4)
    z1 = Tensor(rng.normal(size=(16, 4)).astype(np.float32))
    z2 = Tensor(rng.normal(size=(16, 4)).astype(np.float32))
    params = dict(critic.named_parameters())
    with Tape() as tape:
        bound = mine_lower_bound(critic, z1, z2, rng.permutation(16))
        loss = ad.neg(bound)
    grads = backward(tape, loss, params=list(params.values()))
    assert all(np.isfinite(g).all() for g in grads.values())
    assert float(critic.ma_init.data) == 1.0


def test_mine_rejects_tiny_batch():
    rng = np.random.default_rng(0)
    critic = MineCritic(rng, d_z=4)
    z = Tensor(np.zeros((1, 4), dtype=np.float32))
    with pytest.raises(ValueError):
        mine_lower_bound(critic, z, z, np.array([0]))


def test_mine_perm_length_checked():
    rng = np.random.default_rng(0)
    critic = MineCritic(rng, d_z=4)
    z = Tensor(rng.normal(size=(8, 4)).astype(np.float32))
    with pytest.raises(Exception):
        mine_lower_bound(critic, z, z, np.arange(5))


def test_mine_update_ma_flag_freezes_buffer():
    rng = np.random.default_rng(1)
    critic = MineCritic(rng, d_z=4)
    z1 = Tensor(rng.normal(size=(8, 4)).astype(np.float32))
    z2 = Tensor(rng.normal(size=(8, 4)).astype(np.float32))
    mine_lower_bound(critic, z1, z2, rng.permutation(8))
    frozen = float(critic.ma.data)
    mine_lower_bound(critic, z1, z2, rng.permutation(8), update_ma=False)
    assert float(critic.ma.data) == frozen


def test_mine_detects_identical_vs_shuffled():
    # With a critic trained briefly on perfectly dependent data, the bound
    # should become clearly positive.
    from cmjivnet.optim import AdamState, adam_step

    rng = np.random.default_rng(2)
    critic = MineCritic(rng, d_z=2)
    params = dict(critic.named_parameters())
    opt = AdamState(lr=5e-3)
    for _ in range(300):
        x = rng.standard_normal((64, 2)).astype(np.float32)
        with Tape() as tape:
            bound = mine_lower_bound(critic, Tensor(x), Tensor(x), rng.permutation(64))
            loss = ad.neg(bound)
        grads = backward(tape, loss, params=list(params.values()))
        adam_step(opt, params, {k: grads[v] for k, v in params.items()})
    x = rng.standard_normal((512, 2)).astype(np.float32)
    final = float(mine_lower_bound(critic, Tensor(x), Tensor(x),
                                   rng.permutation(512), update_ma=False).data)
    assert final > 0.5


def test_supervised_loss_perfect_predictions():
    y = Tensor(np.array([[0.0, 1.0], [1.0, 0.0], [2.0, -1.0]]))
    val = float(supervised_loss(y, y, LossWeights()).data)
    # zero MSE and corr 1 per trait (eps keeps corr just below 1)
    assert val == pytest.approx(0.0, abs=1e-5)


def test_supervised_loss_flags_dead_predictions():
    y = Tensor(np.array([[0.0], [1.0], [2.0]]))
    y_hat = Tensor(np.full((3, 1), 0.7))
    diag = {}
    val = float(supervised_loss(y_hat, y, LossWeights(), diagnostics=diag).data)
    assert diag["zero_variance_traits"] == [0]
    # constant predictions: corr treated as 0 -> penalty 1 plus the MSE part
    mse = float(((y_hat.data - y.data) ** 2).mean())
    assert val == pytest.approx(mse + 1.0, rel=1e-6)


def test_supervised_loss_shape_mismatch():
    from cmjivnet.autodiff import ShapeError

    with pytest.raises(ShapeError):
        supervised_loss(Tensor(np.zeros((3, 2))), Tensor(np.zeros((3, 3))), LossWeights())


def test_kl_gradients_check_out():
    from cmjivnet.gradcheck import check_gradients

    rng = np.random.default_rng(9)
    mu = Tensor(rng.normal(size=(3, 5)), requires_grad=True, dtype=np.float64)
    logvar = Tensor(rng.uniform(-1, 1, size=(3, 5)), requires_grad=True, dtype=np.float64)

    def loss():
        return kl_std_normal(GaussianLatent(mu=mu, logvar=logvar))

    report = check_gradients(loss, {"mu": mu, "logvar": logvar}, h=1e-5)
    assert max(err for err, _ in report.values()) < 1e-6
