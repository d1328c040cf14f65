import numpy as np
import pytest

from recscale import blocks as B
from recscale.tensor import Tensor


def numeric_grad(fn, x, eps=1e-6):
    """Central-difference gradient of scalar fn at every coordinate of x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        i = it.multi_index
        xp = x.copy(); xp[i] += eps
        xm = x.copy(); xm[i] -= eps
        g[i] = (fn(xp) - fn(xm)) / (2 * eps)
        it.iternext()
    return g


def rel_err(a, b, floor=1.0):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def check_op_grad(fn, shapes, seed=0, tol=1e-6, coords=None):
    """Gradient-check a Tensor op against central differences.

    ``fn`` maps Tensor args to a Tensor; the objective is a fixed random
    projection so no output direction is invisible.
    """
    rng = np.random.default_rng(seed)
    datas = [rng.standard_normal(s) for s in shapes]
    args = [Tensor(d.copy(), requires_grad=True) for d in datas]
    out = fn(*args)
    w = rng.standard_normal(out.shape)
    (out * Tensor(w)).sum().backward()
    for k, (arg, data) in enumerate(zip(args, datas)):
        def scalar(x, k=k):
            repl = [Tensor(d.copy()) for d in datas]
            repl[k] = Tensor(x)
            return float((fn(*repl).data * w).sum())
        num = numeric_grad(scalar, data)
        assert arg.grad is not None, f"arg {k}: no gradient"
        err = rel_err(arg.grad, num)
        assert err < tol, f"arg {k}: rel err {err:.3e} >= {tol}"


def all_block_corners():
    """The 60 variant corners: activation x bias x interaction x residual."""
    return [
        B.BlockConfig(dim=8, heads=2, activation=act, bias_kind=bias,
                      feature_interaction=fi, residual=res, ffn_hidden=12, max_len=6)
        for act in B.ACTIVATIONS
        for bias in B.BIAS_KINDS
        for fi in (True, False)
        for res in B.RESIDUALS
    ]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
