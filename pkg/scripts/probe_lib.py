"""Diagnostics shared by the calibration scripts."""

import sys

import numpy as np

sys.path.insert(0, "src")

from cmjivnet.autodiff import Tensor, sigmoid
from cmjivnet.evaluation import pairwise_angles, pearson_individual
from cmjivnet.model import latent_means, run_model


def insample_r2(targets: np.ndarray, feats: np.ndarray) -> float:
    x = np.concatenate([feats, np.ones((feats.shape[0], 1))], axis=1)
    beta, *_ = np.linalg.lstsq(x, targets, rcond=None)
    resid = targets - x @ beta
    return float(1.0 - (resid ** 2).sum() / ((targets - targets.mean(0)) ** 2).sum())


def cv_r2(targets: np.ndarray, feats: np.ndarray, folds: int = 5, seed: int = 0) -> float:
    """Pooled out-of-fold R^2 of ridge (tiny alpha) regression feats -> targets."""
    n = targets.shape[0]
    order = np.random.default_rng(seed).permutation(n)
    sse = 0.0
    for f in range(folds):
        test = order[f::folds]
        train = np.setdiff1d(order, test)
        x_tr = np.concatenate([feats[train], np.ones((len(train), 1))], axis=1)
        x_te = np.concatenate([feats[test], np.ones((len(test), 1))], axis=1)
        gram = x_tr.T @ x_tr + 1e-3 * np.eye(x_tr.shape[1])
        beta = np.linalg.solve(gram, x_tr.T @ targets[train])
        sse += ((targets[test] - x_te @ beta) ** 2).sum()
    sst = ((targets - targets.mean(0)) ** 2).sum()
    return float(1.0 - sse / sst)


def _kl_of(g) -> float:
    mu = g.mu.data.astype(np.float64)
    lv = g.logvar.data.astype(np.float64)
    kl = 0.5 * (mu ** 2 + np.exp(lv) - 1.0 - lv).sum(axis=1)
    return float(kl.mean())


def full_probes(model, train, test):
    fc_tr = np.stack([s.fc.matrix for s in train.samples])
    sc_tr = np.stack([s.sc.matrix for s in train.samples])
    model.eval()
    state = run_model(model, fc_tr, sc_tr, noise=None)
    triple = state.triple
    mu_j = triple.joint.mu.data.astype(np.float64)
    mu_f = triple.fc_ind.mu.data.astype(np.float64)
    mu_s = triple.sc_ind.mu.data.astype(np.float64)
    ang = pairwise_angles(mu_j, mu_f, mu_s)
    tr = train.truth_matrix()
    out = {
        "a_jf": ang["joint_fc"][0], "a_js": ang["joint_sc"][0], "a_fs": ang["fc_sc"][0],
        "r2j": insample_r2(tr.s_joint, mu_j),
        "r2f": insample_r2(tr.s_joint, mu_f),
        "r2s": insample_r2(tr.s_joint, mu_s),
        "cvj": cv_r2(tr.s_joint, mu_j),
        "cvf": cv_r2(tr.s_joint, mu_f),
        "cvs": cv_r2(tr.s_joint, mu_s),
        "kl_j": _kl_of(triple.joint),
        "kl_f": _kl_of(triple.fc_ind),
        "kl_s": _kl_of(triple.sc_ind),
    }
    out["gap"] = out["r2j"] - max(out["r2f"], out["r2s"])
    out["cvgap"] = out["cvj"] - max(out["cvf"], out["cvs"])
    # gate values on the attended tokens
    fusion = model.fusion
    mixed = fusion._attend(fusion._stack(state.z_fc_tilde, state.z_sc_tilde))
    gates = sigmoid(fusion.gate(mixed)).data  # (B, 2, 1)
    out["g_fc"] = float(gates[:, 0, 0].mean())
    out["g_sc"] = float(gates[:, 1, 0].mean())
    fc_te = np.stack([s.fc.matrix for s in test.samples])
    sc_te = np.stack([s.sc.matrix for s in test.samples])
    st = run_model(model, fc_te, sc_te, noise=None)
    out["p_fc"] = pearson_individual(test.fc_edges(), st.fc_mu_edges.data)[0]
    out["p_sc"] = pearson_individual(test.sc_edges(), st.sc_rate_edges.data)[0]
    model.train()
    return out


def fmt(d):
    return " ".join(f"{k}={v:.3f}" for k, v in d.items())
