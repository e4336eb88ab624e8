"""Network trainers: first-order Adam and second-order Levenberg-Marquardt.

Adam drives the convolutional nets (minibatched, cross-entropy or MSE,
optional L2 on weight matrices, optional validation-based early stopping
with best-epoch weight selection).  Levenberg-Marquardt drives the small
dense stage networks: full-batch residuals, Gauss-Newton system
``(J'J + mu*I) delta = -J'r`` with adaptive damping, and an
accepted-step-never-increases-SSE contract.

One LM "epoch" is a single accepted-or-exhausted damping cycle over the
full batch; one Adam epoch is a single pass over all minibatches.
"""

import csv
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from . import nn


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    l2: float = 0.0  # additive lambda*||W||^2 on weight matrices, biases excluded


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int
    config: AdamConfig

    @classmethod
    def fresh(cls, num_params, config=AdamConfig()):
        return cls(m=np.zeros(num_params), v=np.zeros(num_params), t=0, config=config)


@dataclass(frozen=True)
class LmConfig:
    mu0: float = 1e-3
    mu_inc: float = 10.0
    mu_dec: float = 0.1
    mu_min: float = 1e-10
    mu_max: float = 1e10
    retry_cap: int = 5  # extra damping attempts after the first, per step

    def __post_init__(self):
        if not (self.mu_inc > 1.0 and 0.0 < self.mu_dec < 1.0):
            raise ValueError("mu_inc must exceed 1 and mu_dec lie in (0, 1)")
        if not (self.mu_min <= self.mu0 <= self.mu_max):
            raise ValueError("mu0 must lie within [mu_min, mu_max]")


@dataclass
class LmState:
    mu: float
    config: LmConfig

    @classmethod
    def fresh(cls, config=LmConfig()):
        return cls(mu=config.mu0, config=config)


@dataclass(frozen=True)
class StopCriterion:
    """Epoch budget plus 'very early stopping' target error (and optional patience).

    ``target_error`` is compared against the epoch training error after each
    epoch; ``patience`` (validation epochs without improvement) only applies
    when validation data is supplied.
    """
    max_epochs: int
    target_error: float = 0.0
    patience: int | None = None

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.target_error < 0:
            raise ValueError("target_error must be >= 0")


@dataclass
class LmStepResult:
    params: np.ndarray
    state: LmState
    sse: float
    accepted: bool
    attempts: int


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def adam_step(params, grads, state):
    """One bias-corrected Adam update on flat parameter/gradient vectors.

    Returns ``(new_params, new_state)``; the inputs are not modified.
    Non-finite gradients reject the step with :class:`nn.NumericsError`.
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise nn.ShapeError("parameter/gradient/state shapes disagree")
    if not np.all(np.isfinite(grads)):
        raise nn.NumericsError("non-finite gradients; Adam step rejected")
    cfg = state.config
    t = state.t + 1
    m = cfg.beta1 * state.m + (1 - cfg.beta1) * grads
    v = cfg.beta2 * state.v + (1 - cfg.beta2) * grads ** 2
    m_hat = m / (1 - cfg.beta1 ** t)
    v_hat = v / (1 - cfg.beta2 ** t)
    new_params = params - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return new_params, AdamState(m=m, v=v, t=t, config=cfg)


def _weight_mask(net):
    """Boolean vector marking weight-matrix entries (L2 applies to these only)."""
    chunks = []
    for layer, block in zip(net.layers, net.params):
        for k in nn.TRAINABLE_KEYS.get(type(layer), ()):
            chunks.append(np.full(block[k].size, k == "W"))
    return np.concatenate(chunks) if chunks else np.zeros(0, dtype=bool)


# ---------------------------------------------------------------------------
# Levenberg-Marquardt
# ---------------------------------------------------------------------------

_LM_LAYERS = (nn.Dense, nn.Tanh, nn.Relu)


def _require_lm_compatible(net):
    if not all(isinstance(l, _LM_LAYERS) for l in net.layers):
        raise ValueError("Levenberg-Marquardt supports dense networks only "
                         "(dense / tanh / relu layers)")


def compute_jacobian(net, x):
    """Jacobian of the residual vector w.r.t. all trainable parameters.

    Row ``i*O + o`` is the gradient of output ``o`` on sample ``i`` (the
    residual ``prediction - target`` has the same Jacobian since targets are
    constant).  Dense-only networks; fully vectorized over the batch.
    """
    _require_lm_compatible(net)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None]
    if x.shape[0] == 0:
        raise ValueError("batch must be nonempty")

    # forward with the activations the backward sweep needs
    acts = []
    h = x
    for layer, block in zip(net.layers, net.params):
        if isinstance(layer, nn.Dense):
            acts.append(h)
            h = h @ block["W"] + block["b"]
        elif isinstance(layer, nn.Tanh):
            h = np.tanh(h)
            acts.append(h)
        else:  # Relu
            acts.append(h > 0)
            h = np.maximum(h, 0.0)

    batch, out_dim = h.shape
    jac = np.empty((batch * out_dim, net.num_params))
    for o in range(out_dim):
        delta = np.zeros((batch, out_dim))
        delta[:, o] = 1.0
        cols = [None] * len(net.layers)
        d = delta
        for i in range(len(net.layers) - 1, -1, -1):
            layer, block = net.layers[i], net.params[i]
            if isinstance(layer, nn.Dense):
                x_in = acts[i]
                g_w = np.einsum("bi,bo->bio", x_in, d).reshape(batch, -1)
                cols[i] = (g_w, d)
                d = d @ block["W"].T
            elif isinstance(layer, nn.Tanh):
                d = d * (1.0 - acts[i] ** 2)
            else:
                d = d * acts[i]
        rows = np.concatenate(
            [np.concatenate(cols[i], axis=1) for i in range(len(net.layers)) if cols[i]],
            axis=1)
        jac[o::out_dim] = rows
    return jac


def _lm_solve(jac, residuals, mu):
    """Solve (J'J + mu I) delta = -J'r through the smaller Gram matrix."""
    m, p = jac.shape
    if p <= m:
        gram = jac.T @ jac
        gram[np.diag_indices(p)] += mu
        factor = cho_factor(gram)
        return cho_solve(factor, -(jac.T @ residuals))
    gram = jac @ jac.T
    gram[np.diag_indices(m)] += mu
    factor = cho_factor(gram)
    return -(jac.T @ cho_solve(factor, residuals))


def _batch_sse(net, x, y):
    pred, _ = nn.forward(net, x, "infer")
    r = (pred - y).ravel()
    return float(r @ r), r


def lm_step(net, x, y, state):
    """One damped Gauss-Newton step over the full batch.

    Tries ``(J'J + mu I) delta = -J'r``; accepts the candidate only if it
    strictly decreases the sum of squared residuals, relaxing damping on
    acceptance and escalating it (with retries, including on singular
    factorizations) otherwise.  An exhausted retry budget reports
    no-progress rather than raising; ``net`` is left at the accepted
    parameters (or untouched if none were).
    """
    _require_lm_compatible(net)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    cfg = state.config
    base = net.get_vector()
    sse, residuals = _batch_sse(net, x, y)
    jac = compute_jacobian(net, x)
    if not np.all(np.isfinite(jac)):
        raise nn.NumericsError("non-finite Jacobian")

    mu = state.mu
    attempts = 0
    while attempts <= cfg.retry_cap:
        attempts += 1
        try:
            delta = _lm_solve(jac, residuals, mu)
        except LinAlgError:
            mu = min(mu * cfg.mu_inc, cfg.mu_max)
            continue
        net.set_vector(base + delta)
        new_sse, _ = _batch_sse(net, x, y)
        if np.isfinite(new_sse) and new_sse < sse:
            new_mu = max(mu * cfg.mu_dec, cfg.mu_min)
            return LmStepResult(params=net.get_vector(), state=LmState(new_mu, cfg),
                                sse=new_sse, accepted=True, attempts=attempts)
        mu = min(mu * cfg.mu_inc, cfg.mu_max)
    net.set_vector(base)
    return LmStepResult(params=base, state=LmState(mu, cfg),
                        sse=sse, accepted=False, attempts=attempts)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def _snapshot(net):
    return [{k: v.copy() for k, v in block.items()} if block else None
            for block in net.params]


def train(net, x, y, optimizer, stop, seed=0, loss_kind="mse",
          val=None, adam_config=None, lm_config=None):
    """Train ``net`` in place; returns ``(net, history)``.

    ``optimizer`` is ``"adam"`` or ``"lm"``.  ``val`` is an optional
    ``(x_val, y_val)`` pair: when present the returned weights are those of
    the epoch with minimal validation error, and ``stop.patience`` (if set)
    ends training after that many epochs without improvement.  Without
    validation the final-epoch weights are returned.  Training always stops
    once the epoch training error drops to ``stop.target_error`` or below.

    ``history`` is a list of dicts with keys ``epoch``, ``train_error``,
    ``val_error`` (NaN when unused) and ``step_size`` (mu for LM, the
    learning rate for Adam); see :func:`export_history_csv`.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValueError("training set is empty")
    if y.ndim == 1:
        y = y[:, None]
    if optimizer == "adam":
        return _train_adam(net, x, y, stop, seed, loss_kind, val,
                           adam_config or AdamConfig())
    if optimizer == "lm":
        if loss_kind != "mse":
            raise ValueError("LM minimizes squared error; loss_kind must be 'mse'")
        return _train_lm(net, x, y, stop, val, lm_config or LmConfig())
    raise ValueError(f"unknown optimizer {optimizer!r}")


def _eval_error(net, x, y, loss_kind):
    pred, _ = nn.forward(net, x, "infer")
    return nn.loss(loss_kind, pred, y)


def _train_adam(net, x, y, stop, seed, loss_kind, val, cfg):
    rng = np.random.default_rng(seed)
    state = AdamState.fresh(net.num_params, cfg)
    mask = _weight_mask(net)
    n = x.shape[0]
    batch = min(cfg.batch_size, n)
    history = []
    best_err, best_epoch, best_params = np.inf, -1, None

    for epoch in range(1, stop.max_epochs + 1):
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            xb, yb = x[idx], y[idx]
            out, cache = nn.forward(net, xb, "train", rng=rng)
            epoch_losses.append(nn.loss(loss_kind, out, yb))
            grads = nn.backward(net, cache, nn.loss_grad(loss_kind, out, yb))
            gvec = _flatten(net, grads)
            if cfg.l2 > 0.0:
                gvec = gvec + 2.0 * cfg.l2 * net.get_vector() * mask
            new_vec, state = adam_step(net.get_vector(), gvec, state)
            net.set_vector(new_vec)

        train_err = float(np.mean(epoch_losses))
        val_err = _eval_error(net, *val, loss_kind) if val is not None else np.nan
        history.append({"epoch": epoch, "train_error": train_err,
                        "val_error": val_err, "step_size": cfg.lr})
        if val is not None and val_err < best_err:
            best_err, best_epoch, best_params = val_err, epoch, _snapshot(net)
        if train_err <= stop.target_error:
            break
        if (val is not None and stop.patience is not None
                and epoch - best_epoch >= stop.patience):
            break

    if val is not None and best_params is not None:
        net.params = best_params
    return net, history


def _train_lm(net, x, y, stop, val, cfg):
    state = LmState.fresh(cfg)
    denom = y.size
    history = []
    for epoch in range(1, stop.max_epochs + 1):
        result = lm_step(net, x, y, state)
        state = result.state
        mse = result.sse / denom
        val_err = _eval_error(net, *val, "mse") if val is not None else np.nan
        history.append({"epoch": epoch, "train_error": mse,
                        "val_error": val_err, "step_size": state.mu})
        if mse <= stop.target_error:
            break
    return net, history


def _flatten(net, grads):
    chunks = []
    for layer, block in zip(net.layers, grads):
        for k in nn.TRAINABLE_KEYS.get(type(layer), ()):
            chunks.append(block[k].ravel())
    return np.concatenate(chunks) if chunks else np.zeros(0)


def export_history_csv(history, path):
    """Write a training history to CSV (epoch, train_error, val_error, step_size)."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "train_error", "val_error", "step_size"])
        writer.writeheader()
        for row in history:
            writer.writerow(row)
