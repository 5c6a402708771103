import numpy as np
import pytest

from colactc.data import TaskSpec, generate
from colactc.model.config import TrainConfig


def micro_config(**kw) -> TrainConfig:
    base = dict(d=4, n_enc=1, n_dec=1, n_heads=1, ffn_dim=6, v_src=7, v_tgt=6, f_dim=3,
                label_size=3, k_concat=2, dropout=0.0, f64=True, seed=3)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture
def micro_cfg():
    return micro_config()


@pytest.fixture(scope="session")
def toy_items():
    spec = TaskSpec(v_src=20, v_tgt=24, f_dim=4, len_min=2, len_max=5, seed=5)
    return spec, generate(spec, 12)


def rel_err(a, b, floor=1e-7) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


def micro_batch(cfg, seed=0):
    """Two items; the first has 10 frames (5 encoder rows at k=2) and |y| = 3."""
    rng = np.random.default_rng(seed)
    frames = rng.normal(size=(2, 10, cfg.f_dim))
    return frames, [10, 7], [[1, 2, 3], [4, 0]], [[0, 1, 2], [1, 1]]


def perturbed_params(cfg, seed=0, scale=0.1):
    from colactc.model.network import init_params

    p = init_params(cfg)
    rng = np.random.default_rng(seed)
    p.flat += rng.normal(size=p.flat.shape) * scale
    return p


def fd_param_errors(params, cfg, batch, lam=None, eps=1e-5):
    """Relative error of analytic vs central-difference gradients, per parameter block."""
    from colactc.model.network import forward_backward

    frames, flen, tgt, lab = batch
    r = forward_backward(params, cfg, frames, flen, tgt, lab, lam=lam)
    errs = {}
    for k in params:
        num = np.zeros_like(params[k])
        for i in range(params[k].size):
            old = params[k].flat[i]
            params[k].flat[i] = old + eps
            a = forward_backward(params, cfg, frames, flen, tgt, lab, lam=lam, need_grad=False).total
            params[k].flat[i] = old - eps
            b = forward_backward(params, cfg, frames, flen, tgt, lab, lam=lam, need_grad=False).total
            params[k].flat[i] = old
            num.flat[i] = (a - b) / (2 * eps)
        errs[k] = rel_err(r.grads[k], num)
    return errs
