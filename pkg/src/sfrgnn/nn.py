"""Dense/sparse numeric substrate: 2-layer GCN/MLP forward+backward, losses
with analytic gradients, Adam, and finite-difference verification.

No autodiff anywhere: every gradient below is derived by hand and checked
against central finite differences (see `check_gradients`). All kernels are
pure functions; in-place mutation is confined to `adam_step`.

Shapes: x is N x d, w1 is d x F, w2 is F x C. Propagation `prop` is either a
normalized CSR adjacency or None, in which case the propagation step is
skipped entirely (mathematically f(X, I)) and the graph is never touched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backend import spmm_raw
from .errors import NumericError, ValidationError
from .graph import CsrAdjacency
from .rng import RngState

NORM_EPS = 1e-12  # cosine-similarity zero-norm clamp


def spmm(adj: CsrAdjacency, h: np.ndarray) -> np.ndarray:
    """Propagate: out[i] = sum_j adj[i, j] * h[j]."""
    if adj.dim != h.shape[0]:
        raise ValidationError(f"spmm dimension mismatch: {adj.dim} vs {h.shape[0]}")
    return spmm_raw(adj.row_offsets, adj.col_indices, adj.values, h)


@dataclass
class ModelParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def copy(self) -> "ModelParams":
        return ModelParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(
            self.w1.astype(dtype), self.b1.astype(dtype),
            self.w2.astype(dtype), self.b2.astype(dtype),
        )

    def arrays(self) -> tuple[np.ndarray, ...]:
        return (self.w1, self.b1, self.w2, self.b2)


ParamGrads = ModelParams


def init_params(d: int, hidden: int, classes: int, rng: RngState, dtype=np.float32) -> ModelParams:
    """Glorot-uniform weights, zero biases, drawn from the init substream."""
    gen = rng.substream("init").generator()

    def glorot(fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return gen.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)

    return ModelParams(
        w1=glorot(d, hidden),
        b1=np.zeros(hidden, dtype=dtype),
        w2=glorot(hidden, classes),
        b2=np.zeros(classes, dtype=dtype),
    )


def params_to_vector(p: ModelParams) -> np.ndarray:
    return np.concatenate([a.ravel() for a in p.arrays()]).astype(np.float64)


def vector_to_params(vec: np.ndarray, like: ModelParams) -> ModelParams:
    out, i = [], 0
    for a in like.arrays():
        out.append(vec[i : i + a.size].reshape(a.shape).astype(a.dtype))
        i += a.size
    return ModelParams(*out)


@dataclass
class ForwardCache:
    x: np.ndarray
    prop: CsrAdjacency | None
    a1: np.ndarray  # x @ w1
    h: np.ndarray  # post-ReLU, pre-dropout hidden
    hd: np.ndarray  # hidden after dropout (== h in eval mode)
    drop_scale: np.ndarray | None  # inverted-dropout mask / keep_prob
    log_probs: np.ndarray
    params: ModelParams
    spmm_count: int


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _check_finite(a: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite values in {where}")


def gcn_forward(
    params: ModelParams,
    x: np.ndarray,
    prop: CsrAdjacency | None,
    dropout_p: float,
    rng: RngState | None,
    train_mode: bool,
) -> tuple[np.ndarray, ForwardCache]:
    """Two-layer forward pass. With prop=None the propagation step is skipped
    (pure MLP over attributes); dropout hits the hidden layer in train mode
    only. Returns row-wise log-softmax and the cache backward needs."""
    if not (0.0 <= dropout_p < 1.0):
        raise ValidationError("dropout_p must lie in [0, 1)")
    dtype = params.w1.dtype
    x = x.astype(dtype, copy=False)
    n_spmm = 0

    a1 = x @ params.w1
    s1 = spmm(prop, a1) if prop is not None else a1
    n_spmm += prop is not None
    h = np.maximum(s1 + params.b1, 0.0)
    _check_finite(h, "layer 1 output")

    if train_mode and dropout_p > 0.0:
        if rng is None:
            raise ValidationError("train-mode dropout needs an RNG stream")
        keep = 1.0 - dropout_p
        mask = rng.substream("dropout").generator().random(h.shape) < keep
        drop_scale = (mask / keep).astype(dtype)
        hd = h * drop_scale
    else:
        drop_scale = None
        hd = h

    a2 = hd @ params.w2
    s2 = spmm(prop, a2) if prop is not None else a2
    n_spmm += prop is not None
    logits = s2 + params.b2
    _check_finite(logits, "layer 2 output")
    log_probs = _log_softmax(logits)

    cache = ForwardCache(
        x=x, prop=prop, a1=a1, h=h, hd=hd, drop_scale=drop_scale,
        log_probs=log_probs, params=params, spmm_count=n_spmm,
    )
    return log_probs, cache


def _backward_to_s1(cache: ForwardCache, grad_log_probs, grad_hidden):
    """Shared backward core: returns (dlogits, da2, ds1)."""
    p = cache.params
    probs = np.exp(cache.log_probs)
    dlogits = grad_log_probs - probs * grad_log_probs.sum(axis=1, keepdims=True)
    dlogits = dlogits.astype(p.w1.dtype, copy=False)
    da2 = spmm(cache.prop, dlogits) if cache.prop is not None else dlogits
    dhd = da2 @ p.w2.T
    dh = dhd * cache.drop_scale if cache.drop_scale is not None else dhd
    if grad_hidden is not None:
        dh = dh + grad_hidden.astype(p.w1.dtype, copy=False)
    ds1 = dh * (cache.h > 0)
    return dlogits, da2, ds1


def gcn_backward(
    cache: ForwardCache,
    grad_log_probs: np.ndarray,
    grad_hidden: np.ndarray | None = None,
) -> ParamGrads:
    """Exact analytic parameter gradients of the cached forward pass.

    `grad_hidden`, when given, is an extra upstream gradient injected at the
    post-ReLU pre-dropout hidden representation (the contrastive surface).
    """
    p = cache.params
    dlogits, da2, ds1 = _backward_to_s1(cache, grad_log_probs, grad_hidden)
    da1 = spmm(cache.prop, ds1) if cache.prop is not None else ds1
    return ParamGrads(
        w1=cache.x.T @ da1,
        b1=ds1.sum(axis=0),
        w2=cache.hd.T @ da2,
        b2=dlogits.sum(axis=0),
    )


def gcn_backward_wrt_prop(cache: ForwardCache, grad_log_probs: np.ndarray) -> np.ndarray:
    """Dense N x N gradient of the loss w.r.t. the propagation matrix entries.

    Used by the gradient attack; the caller owns the dense-buffer capacity cap.
    """
    if cache.prop is None:
        raise ValidationError("no propagation matrix in this forward pass")
    p = cache.params
    dlogits, _, ds1 = _backward_to_s1(cache, grad_log_probs, None)
    a2 = cache.hd @ p.w2
    dprop = dlogits @ a2.T
    dprop += ds1 @ cache.a1.T
    return dprop.astype(np.float64)


def nll_loss(
    log_probs: np.ndarray, labels: np.ndarray, mask: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood over masked nodes; gradient zero elsewhere."""
    idx = np.flatnonzero(mask)
    if idx.shape[0] == 0:
        raise ValidationError("nll_loss over an empty mask")
    picked = log_probs[idx, labels[idx]]
    loss = -float(picked.mean())
    grad = np.zeros_like(log_probs)
    grad[idx, labels[idx]] = -1.0 / idx.shape[0]
    return loss, grad


def _normalize_rows(z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    norms = np.linalg.norm(z, axis=1)
    clamped = np.maximum(norms, NORM_EPS)
    return z / clamped[:, None], norms, clamped


def infonce_loss(
    z: np.ndarray, z_aug: np.ndarray, mask: np.ndarray, temperature: float
) -> tuple[float, np.ndarray, np.ndarray]:
    """Masked InfoNCE with cosine similarity.

    Anchors are the masked rows of z, positives the same rows of z_aug,
    negatives all other masked rows of z_aug. Analytic gradients flow to both
    inputs; rows outside the mask get zero gradient. Zero-norm rows are
    clamped at NORM_EPS before division.
    """
    if temperature <= 0.0:
        raise ValidationError("temperature must be > 0")
    if z.shape != z_aug.shape:
        raise ValidationError("z and z_aug must have identical shapes")
    idx = np.flatnonzero(mask)
    t = idx.shape[0]
    if t == 0:
        raise ValidationError("infonce_loss over an empty mask")

    u_raw = z[idx].astype(np.float64)
    v_raw = z_aug[idx].astype(np.float64)
    u, u_norm, u_clamp = _normalize_rows(u_raw)
    v, v_norm, v_clamp = _normalize_rows(v_raw)

    sims = (u @ v.T) / temperature
    log_p = _log_softmax(sims)
    loss = -float(np.diagonal(log_p).mean())

    dsims = (np.exp(log_p) - np.eye(t)) / t
    du = (dsims @ v) / temperature
    dv = (dsims.T @ u) / temperature

    # through row normalization: d(x/n)/dx = (I - u u^T)/n on the sphere,
    # or a plain 1/eps scaling when the norm sat at the clamp.
    def through_norm(draw, unit, norms, clamp):
        live = norms > NORM_EPS
        out = np.empty_like(draw)
        inner = (draw * unit).sum(axis=1, keepdims=True)
        out[live] = (draw[live] - unit[live] * inner[live]) / clamp[live, None]
        out[~live] = draw[~live] / NORM_EPS
        return out

    grad_z = np.zeros(z.shape, dtype=np.float64)
    grad_z_aug = np.zeros(z.shape, dtype=np.float64)
    grad_z[idx] = through_norm(du, u, u_norm, u_clamp)
    grad_z_aug[idx] = through_norm(dv, v, v_norm, v_clamp)
    return loss, grad_z.astype(z.dtype), grad_z_aug.astype(z.dtype)


@dataclass
class AdamState:
    m: ModelParams
    v: ModelParams
    t: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        return cls(
            m=ModelParams(*(np.zeros_like(a) for a in params.arrays())),
            v=ModelParams(*(np.zeros_like(a) for a in params.arrays())),
        )


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def adam_step(
    params: ModelParams,
    grads: ParamGrads,
    state: AdamState,
    lr: float,
    weight_decay: float,
) -> tuple[ModelParams, AdamState]:
    """In-place Adam update with the L2 term folded into the gradient."""
    state.t += 1
    bc1 = 1.0 - ADAM_BETA1**state.t
    bc2 = 1.0 - ADAM_BETA2**state.t
    for p, g, m, v in zip(params.arrays(), grads.arrays(), state.m.arrays(), state.v.arrays()):
        g_eff = g + weight_decay * p if weight_decay else g
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g_eff
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g_eff * g_eff
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
    return params, state


def finite_difference_grad(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar f at x (x is not modified)."""
    x = x.astype(np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.shape[0]):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x)
        flat[i] = orig - eps
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


def relative_gradient_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max per-component relative error, floored against the gradient scale so
    near-zero components do not inflate the ratio."""
    a = analytic.astype(np.float64).ravel()
    b = numeric.astype(np.float64).ravel()
    scale = float(np.max(np.abs(a) + np.abs(b), initial=0.0))
    denom = np.maximum(np.abs(a) + np.abs(b), max(1e-4 * scale, 1e-12))
    return float(np.max(np.abs(a - b) / denom, initial=0.0))


@dataclass
class GradCheckReport:
    errors: dict[str, float] = field(default_factory=dict)
    threshold: float = 1e-5

    @property
    def passed(self) -> bool:
        return all(e < self.threshold for e in self.errors.values())

    def summary(self) -> str:
        lines = [
            f"{name}: max_rel_err={err:.3e} "
            f"{'ok' if err < self.threshold else 'FAIL'}"
            for name, err in self.errors.items()
        ]
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'} (threshold {self.threshold:g})")
        return "\n".join(lines)


def _random_instance(rng: RngState, n=6, d=4, hidden=3, classes=3):
    from .graph import csr_from_edge_pairs, normalize_adjacency

    gen = rng.substream("gradcheck-data").generator()
    x = gen.standard_normal((n, d))
    labels = gen.integers(0, classes, size=n).astype(np.int64)
    mask = np.zeros(n, dtype=bool)
    mask[gen.permutation(n)[: max(2, n // 2)]] = True
    iu, ju = np.triu_indices(n, k=1)
    keep = gen.random(iu.shape[0]) < 0.5
    if not keep.any():
        keep[0] = True
    adj = csr_from_edge_pairs(n, np.stack([iu[keep], ju[keep]], axis=1))
    params = init_params(d, hidden, classes, rng, dtype=np.float64)
    return x, labels, mask, normalize_adjacency(adj), params


def check_gradients(rng: RngState, eps: float = 1e-5) -> GradCheckReport:
    """Finite-difference suites for the GCN backward, NLL, and InfoNCE."""
    report = GradCheckReport()
    x, labels, mask, prop, params = _random_instance(rng)
    drop_rng = rng.substream("gradcheck-dropout")

    cases = {
        "gcn_backward/propagated": (prop, 0.0, False),
        "gcn_backward/no_prop": (None, 0.0, False),
        "gcn_backward/train_dropout": (prop, 0.5, True),
    }
    for name, (case_prop, p_drop, train) in cases.items():
        def loss_of(theta_vec, _prop=case_prop, _p=p_drop, _train=train):
            theta = vector_to_params(theta_vec, params)
            lp, _ = gcn_forward(theta, x, _prop, _p, drop_rng, _train)
            loss, _ = nll_loss(lp, labels, mask)
            return loss

        lp, cache = gcn_forward(params, x, case_prop, p_drop, drop_rng, train)
        _, grad_lp = nll_loss(lp, labels, mask)
        grads = gcn_backward(cache, grad_lp)
        analytic = params_to_vector(grads)
        numeric = finite_difference_grad(loss_of, params_to_vector(params), eps)
        report.errors[name] = relative_gradient_error(analytic, numeric)

    def nll_of(lp_mat):
        return nll_loss(lp_mat, labels, mask)[0]

    lp, _ = gcn_forward(params, x, prop, 0.0, None, False)
    _, grad_lp = nll_loss(lp, labels, mask)
    report.errors["nll_loss"] = relative_gradient_error(
        grad_lp, finite_difference_grad(nll_of, lp, eps)
    )

    gen = rng.substream("gradcheck-infonce").generator()
    t, dim = 5, 4
    z = gen.standard_normal((t + 2, dim))
    z_aug = gen.standard_normal((t + 2, dim))
    cmask = np.zeros(t + 2, dtype=bool)
    cmask[:t] = True
    _, gz, gza = infonce_loss(z, z_aug, cmask, temperature=1.0)
    report.errors["infonce/z"] = relative_gradient_error(
        gz, finite_difference_grad(lambda m: infonce_loss(m, z_aug, cmask, 1.0)[0], z, eps)
    )
    report.errors["infonce/z_aug"] = relative_gradient_error(
        gza, finite_difference_grad(lambda m: infonce_loss(z, m, cmask, 1.0)[0], z_aug, eps)
    )
    return report
