"""Reference models to compare the reservoir against.

Two baselines operate on vectorized fields: closed-form linear regression
(delegating to the reservoir readout solver) and a small identity-activation
multilayer perceptron trained with mini-batch Adam on mean squared error.
The MLP's layers are all affine, so the whole network collapses to a single
affine map; it is kept in layered form anyway because the layered
parameterization (and its optimization trajectory) is what we compare
against, and the collapse makes for a free correctness check.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, NumericError
from .readout import ReadoutSolution, fit_readout

DEFAULT_LAYER_DIMS = (10_988, 8, 8, 1)

ADAM_LR = 0.0005
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

INIT_HALF_RANGE = 0.05


@dataclass(frozen=True)
class MlpModel:
    """Feed-forward net with identity activations throughout."""

    layer_dims: Tuple[int, ...]
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        if len(self.layer_dims) < 2:
            raise ConfigError(f"need at least input and output dims, got {self.layer_dims}")
        if any(d < 1 for d in self.layer_dims):
            raise ConfigError(f"layer dims must be positive, got {self.layer_dims}")
        n_layers = len(self.layer_dims) - 1
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise ConfigError(
                f"{n_layers} layers need {n_layers} weight and bias blocks, "
                f"got {len(self.weights)} and {len(self.biases)}"
            )
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            want = (self.layer_dims[i + 1], self.layer_dims[i])
            if w.shape != want:
                raise ConfigError(f"weight block {i} has shape {w.shape}, want {want}")
            if b.shape != (self.layer_dims[i + 1],):
                raise ConfigError(f"bias block {i} has shape {b.shape}, want ({self.layer_dims[i + 1]},)")

    @property
    def param_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


@dataclass
class AdamState:
    """Per-parameter moment accumulators and hyperparameters."""

    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int = 0
    lr: float = ADAM_LR
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS


def init_mlp(layer_dims: Sequence[int] = DEFAULT_LAYER_DIMS, seed: int = 0) -> MlpModel:
    """Uniform init in [-0.05, 0.05] from a dedicated substream of the seed."""
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[0])
    dims = tuple(int(d) for d in layer_dims)
    weights = []
    biases = []
    for n_in, n_out in zip(dims[:-1], dims[1:]):
        w = rng.uniform(-INIT_HALF_RANGE, INIT_HALF_RANGE, size=(n_out, n_in))
        b = rng.uniform(-INIT_HALF_RANGE, INIT_HALF_RANGE, size=n_out)
        w.setflags(write=False)
        b.setflags(write=False)
        weights.append(w)
        biases.append(b)
    return MlpModel(layer_dims=dims, weights=tuple(weights), biases=tuple(biases))


def mlp_forward(model: MlpModel, x: np.ndarray) -> List[np.ndarray]:
    """Layer activations for a batch, input first. Identity nonlinearity."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != model.layer_dims[0]:
        raise ConfigError(f"input width {x.shape[1]} does not match model input dim {model.layer_dims[0]}")
    activations = [x]
    for w, b in zip(model.weights, model.biases):
        activations.append(activations[-1] @ w.T + b)
    return activations


def mlp_predict(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Forward pass; a single vector gives a scalar, a batch gives a vector."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    out = mlp_forward(model, x)[-1]
    if out.shape[1] == 1:
        out = out[:, 0]
    return float(out[0]) if single and out.ndim == 1 else (out[0] if single else out)


def composed_affine(model: MlpModel) -> Tuple[np.ndarray, np.ndarray]:
    """Collapse the identity-activation stack into one (matrix, bias) pair."""
    w = model.weights[0]
    b = model.biases[0].copy()
    for w_next, b_next in zip(model.weights[1:], model.biases[1:]):
        w = w_next @ w
        b = w_next @ b + b_next
    return w, b


def mlp_gradients(
    model: MlpModel, x: np.ndarray, y: np.ndarray
) -> Tuple[float, List[np.ndarray], List[np.ndarray]]:
    """MSE loss and its gradients for a batch.

    Loss is the mean over batch entries and output units of the squared
    residual. With identity activations backprop is a chain of matrix
    products; gradients are exact.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape[0] != x.shape[0]:
        raise ConfigError(f"{x.shape[0]} inputs but {y.shape[0]} targets")
    activations = mlp_forward(model, x)
    residual = activations[-1] - y
    loss = float(np.mean(residual**2))
    delta = residual * (2.0 / residual.size)
    grads_w: List[np.ndarray] = [None] * len(model.weights)  # type: ignore[list-item]
    grads_b: List[np.ndarray] = [None] * len(model.biases)  # type: ignore[list-item]
    for layer in range(len(model.weights) - 1, -1, -1):
        grads_w[layer] = delta.T @ activations[layer]
        grads_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = delta @ model.weights[layer]
    return loss, grads_w, grads_b


def adam_init(model: MlpModel, lr: float = ADAM_LR) -> AdamState:
    return AdamState(
        m=[np.zeros_like(p) for p in list(model.weights) + list(model.biases)],
        v=[np.zeros_like(p) for p in list(model.weights) + list(model.biases)],
        lr=lr,
    )


def adam_step(
    params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState
) -> List[np.ndarray]:
    """One Adam update over a flat parameter list; mutates state, returns new params."""
    if len(params) != len(state.m):
        raise ConfigError(f"{len(params)} parameter blocks but state tracks {len(state.m)}")
    state.step += 1
    t = state.step
    scale = state.lr * np.sqrt(1.0 - state.beta2**t) / (1.0 - state.beta1**t)
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g**2
        out.append(p - scale * state.m[i] / (np.sqrt(state.v[i]) + state.eps))
    return out


def train_mlp(
    vectors: np.ndarray,
    targets: np.ndarray,
    epochs: int = 30,
    batch: int = 10,
    seed: int = 0,
    layer_dims: Optional[Sequence[int]] = None,
    lr: float = ADAM_LR,
) -> Tuple[MlpModel, List[float]]:
    """Mini-batch Adam on MSE; deterministic given the seed.

    The seed spawns two substreams, one for the weight init and one for the
    per-epoch reshuffle, so init and batch order never interact. Returns the
    trained model and the per-epoch mean loss history. A non-finite loss
    aborts immediately with the epoch and batch where it appeared.
    """
    vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
    targets = np.asarray(targets, dtype=float)
    if targets.ndim == 1:
        targets = targets[:, None]
    n_samples = vectors.shape[0]
    if targets.shape[0] != n_samples:
        raise ConfigError(f"{n_samples} vectors but {targets.shape[0]} targets")
    if epochs < 1 or batch < 1:
        raise ConfigError(f"epochs and batch must be positive, got {epochs}, {batch}")
    if layer_dims is None:
        layer_dims = (vectors.shape[1], 8, 8, targets.shape[1])
    if layer_dims[0] != vectors.shape[1]:
        raise ConfigError(f"input dim {layer_dims[0]} does not match vector width {vectors.shape[1]}")

    streams = np.random.SeedSequence(seed).spawn(2)
    model = init_mlp(layer_dims, seed=seed)
    shuffle_rng = np.random.default_rng(streams[1])
    state = adam_init(model, lr=lr)

    n_w = len(model.weights)
    history: List[float] = []
    for epoch in range(epochs):
        order = shuffle_rng.permutation(n_samples)
        epoch_losses = []
        for lo in range(0, n_samples, batch):
            rows = order[lo : lo + batch]
            loss, grads_w, grads_b = mlp_gradients(model, vectors[rows], targets[rows])
            if not np.isfinite(loss):
                raise NumericError(
                    f"loss became non-finite ({loss}) at epoch {epoch + 1}, batch {lo // batch + 1}; "
                    "lower the learning rate or rescale the inputs"
                )
            new_params = adam_step(list(model.weights) + list(model.biases), grads_w + grads_b, state)
            for p in new_params:
                p.setflags(write=False)
            model = MlpModel(
                layer_dims=model.layer_dims,
                weights=tuple(new_params[:n_w]),
                biases=tuple(new_params[n_w:]),
            )
            epoch_losses.append(loss)
        history.append(float(np.mean(epoch_losses)))
    return model, history


def fit_linreg(vectors: np.ndarray, targets: np.ndarray, ridge: float = 0.0) -> ReadoutSolution:
    """Closed-form linear regression on vectorized fields."""
    return fit_readout(np.atleast_2d(np.asarray(vectors, dtype=float)), targets, ridge=ridge)


def linreg_predict(model: ReadoutSolution, vectors: np.ndarray) -> np.ndarray:
    """Scores for a batch of vectors under a fitted linear model."""
    vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
    out = vectors @ model.w_out.T + model.b_out
    return out[:, 0] if out.shape[1] == 1 else out
