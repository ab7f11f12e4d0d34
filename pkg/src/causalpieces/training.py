"""Gradient training with the exact spike-time derivatives.

Within one causal piece the spike time is analytic in weights and input
times:

    dt*/dt_k = W_k e^{(t_k - t*)/tau_s} / (sum W - theta)
    dt*/dW_k = tau_s (e^{(t_k - t*)/tau_s} - 1) / (sum W - theta)

for k in the causal set and exactly zero outside it.  Non-spiking
neurons sit at the sentinel and pass no gradient at all.  On top of the
backward sweep live the time-to-first-spike loss, an optional linear
readout head, positive-weight clamping, and a minibatch Adam loop.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import (
    BatchTrace,
    DimensionError,
    InputError,
    NetworkParams,
    NetworkTrace,
    Topology,
    WeightStack,
    forward_batch,
)
from .data import Sample, stack_features
from .estimation import DistributionSpec

__all__ = [
    "TrainConfig",
    "AdamState",
    "GradientBuffers",
    "Metrics",
    "TrainResult",
    "DivergenceError",
    "backward_network",
    "backward_batch",
    "ttfs_loss",
    "clamp_positive",
    "linear_head",
    "softmax_xent",
    "initialize_weights",
    "predict_batch",
    "accuracy",
    "train",
    "save_checkpoint",
    "load_checkpoint",
]

READOUTS = ("spike_times", "linear_head")

# Sentinel spike times feeding a linear head are clamped here; t_inf
# itself would swamp the affine map.
_T_CLAMP_FACTOR = 5.0

_CHUNK_BUDGET = 4_194_304


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings.

    xi is the loss sharpness; None resolves to 0.2 * tau_s when
    training starts.  readout picks between classifying by the earliest
    output spike and a linear head over the last spiking layer's
    (clamped) times; with a head the declared topology's final entry is
    the head's output width, not a spiking layer.
    """

    learning_rate: float = 1e-4
    batch_size: int = 100
    epochs: int = 100
    xi: float | None = None
    seed: int = 0
    positive_weights: bool = False
    readout: str = "spike_times"
    eval_every: int = 10

    def __post_init__(self) -> None:
        if self.learning_rate <= 0.0:
            raise InputError("learning_rate must be positive")
        if self.batch_size < 1:
            raise InputError("batch_size must be >= 1")
        if self.epochs < 0:
            raise InputError("epochs must be >= 0")
        if self.xi is not None and self.xi <= 0.0:
            raise InputError("xi must be positive")
        if self.readout not in READOUTS:
            raise InputError(f"readout must be one of {READOUTS}")
        if self.eval_every < 1:
            raise InputError("eval_every must be >= 1")


@dataclass
class AdamState:
    """Per-array first/second moment buffers."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_arrays(cls, arrays: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])

    def update(self, arrays: Sequence[np.ndarray], grads: Sequence[np.ndarray],
               learning_rate: float) -> None:
        """One Adam step, in place on `arrays`."""
        if len(arrays) != len(self.m) or len(grads) != len(self.m):
            raise DimensionError("optimizer state does not match the parameter list")
        self.step += 1
        bc1 = 1.0 - self.beta1**self.step
        bc2 = 1.0 - self.beta2**self.step
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            a -= learning_rate * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclass
class GradientBuffers:
    """Loss gradients of one backward sweep.

    weight_grads[ell] matches the layer's weight matrix; time_grads[ell]
    holds dL/dt of the layer's output spikes and input_grads the same
    for the raw input times.  Batch sweeps accumulate weight_grads over
    samples and keep the time arrays per sample.
    """

    weight_grads: list[np.ndarray]
    time_grads: list[np.ndarray]
    input_grads: np.ndarray


@dataclass
class Metrics:
    """Per-epoch training record."""

    train_loss: list[float] = field(default_factory=list)
    eval_epochs: list[int] = field(default_factory=list)
    test_accuracy: list[float] = field(default_factory=list)
    best_accuracy: float = 0.0
    best_epoch: int = -1


@dataclass
class TrainResult:
    """Trained parameters plus the metrics trail.

    weights are the stored values; effective_weights applies the
    positive-weight clamp when it was active during training.  adam and
    rng_state capture enough optimizer and shuffle state to resume.
    """

    weights: WeightStack
    metrics: Metrics
    config: TrainConfig
    head_weights: np.ndarray | None = None
    head_bias: np.ndarray | None = None
    adam: AdamState | None = None
    rng_state: dict | None = None

    @property
    def effective_weights(self) -> WeightStack:
        if self.config.positive_weights:
            return clamp_positive(self.weights)
        return self.weights


# ---------------------------------------------------------------------------
# backward sweeps
# ---------------------------------------------------------------------------


def backward_network(
    trace: NetworkTrace,
    output_grad: Sequence[float],
    params: NetworkParams,
    weights: WeightStack,
) -> GradientBuffers:
    """Reverse sweep of one sample (reference implementation).

    output_grad is dL/dt of the final layer's spike times; entries at
    non-spiking outputs are ignored since the sentinel carries no
    derivative.
    """
    topo = weights.topology
    if len(trace.layers) != topo.num_layers:
        raise DimensionError("trace depth does not match the weights")
    for ell in range(topo.num_layers):
        if len(trace.layers[ell]) != topo.layer_sizes[ell + 1]:
            raise DimensionError(f"trace layer {ell} width does not match the weights")
    g = np.asarray(output_grad, dtype=np.float64)
    if g.shape != (topo.num_outputs,):
        raise DimensionError("output_grad must cover the output layer")

    weight_grads = [np.zeros_like(m) for m in weights.matrices]
    time_grads: list[np.ndarray] = [np.empty(0)] * topo.num_layers
    for ell in range(topo.num_layers - 1, -1, -1):
        traces = trace.layers[ell]
        g = np.where([nt.spiked for nt in traces], g, 0.0)
        time_grads[ell] = g
        t_in = trace.inputs if ell == 0 else trace.spike_times(ell - 1)
        g_in = np.zeros(topo.layer_sizes[ell])
        for i, nt in enumerate(traces):
            if not nt.spiked or g[i] == 0.0:
                continue
            cs = np.array(nt.causal_set, dtype=np.intp)
            denom = max(nt.weight_sum - params.theta, params.delta_min)
            e = np.exp((t_in[cs] - nt.spike_time) / params.tau_s)
            w_row = weights.matrices[ell][i, cs]
            weight_grads[ell][i, cs] = g[i] * params.tau_s * (e - 1.0) / denom
            g_in[cs] += g[i] * w_row * e / denom
        g = g_in
    return GradientBuffers(weight_grads, time_grads, g)


def backward_batch(
    trace: BatchTrace,
    output_grad: np.ndarray,
    params: NetworkParams,
    weights: WeightStack,
) -> GradientBuffers:
    """Vectorised backward sweep; weight grads summed over the batch."""
    topo = weights.topology
    if trace.num_layers != topo.num_layers:
        raise DimensionError("trace depth does not match the weights")
    batch = trace.num_samples
    g = np.asarray(output_grad, dtype=np.float64)
    if g.shape != (batch, topo.num_outputs):
        raise DimensionError("output_grad must be [batch, outputs]")

    weight_grads = [np.zeros_like(m) for m in weights.matrices]
    time_grads: list[np.ndarray] = [np.empty(0)] * topo.num_layers
    for ell in range(topo.num_layers - 1, -1, -1):
        act = trace.layers[ell]
        w = weights.matrices[ell]
        n_out, n_in = w.shape
        g = np.where(act.prefix_len > 0, g, 0.0)
        time_grads[ell] = g
        t_in = trace.input_times(ell)
        denom = np.maximum(act.weight_sum - params.theta, params.delta_min)
        coeff = g / denom
        g_in = np.zeros((batch, n_in))
        chunk = max(1, _CHUNK_BUDGET // max(1, n_out * n_in))
        for lo in range(0, batch, chunk):
            hi = min(batch, lo + chunk)
            mask = act.rank[lo:hi, None, :] < act.prefix_len[lo:hi, :, None]
            expo = np.minimum(t_in[lo:hi, None, :] - act.times[lo:hi, :, None], 0.0)
            ce = np.where(mask, coeff[lo:hi, :, None] * np.exp(expo / params.tau_s), 0.0)
            cm = np.where(mask, coeff[lo:hi, :, None], 0.0)
            weight_grads[ell] += params.tau_s * (ce.sum(axis=0) - cm.sum(axis=0))
            g_in[lo:hi] = np.sum(ce * w[None, :, :], axis=1)
        g = g_in
    return GradientBuffers(weight_grads, time_grads, g)


# ---------------------------------------------------------------------------
# losses and readouts
# ---------------------------------------------------------------------------


def _ttfs_batch(times: np.ndarray, labels: np.ndarray, xi: float):
    # an extreme sharpness xi can overflow to non-finite values here;
    # the training loop checks the loss and aborts, so stay silent
    with np.errstate(invalid="ignore", over="ignore"):
        t_lab = np.take_along_axis(times, labels[:, None], axis=1)
        z = (t_lab - times) / xi
        m = np.max(z, axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.sum(np.exp(z - m), axis=1))
        softmax = np.exp(z - lse[:, None])
        grad = -softmax / xi
        grad[np.arange(len(labels)), labels] += 1.0 / xi
    return lse, grad


def ttfs_loss(
    output_times: Sequence[float],
    label: int,
    xi: float,
) -> tuple[float, np.ndarray]:
    """Time-to-first-spike loss of one sample.

    L = log sum_n exp((t_label - t_n) / xi): zero when the labelled
    neuron fires much earlier than the rest, growing as competitors
    catch up.  Returns the loss and dL/dt for every output.
    """
    t = np.asarray(output_times, dtype=np.float64)
    if t.ndim != 1 or not 0 <= label < t.size:
        raise DimensionError("label must index the output vector")
    if xi <= 0.0:
        raise InputError("xi must be positive")
    loss, grad = _ttfs_batch(t[None, :], np.array([label]), xi)
    return float(loss[0]), grad[0]


def clamp_positive(weights: WeightStack) -> WeightStack:
    """Effective weights max(0, stored); the gradient gate is
    (stored > 0), applied by the training loop."""
    return WeightStack([np.maximum(m, 0.0) for m in weights.matrices])


def linear_head(
    hidden_times: np.ndarray,
    head_weights: np.ndarray,
    head_bias: np.ndarray,
    t_clamp: float,
) -> np.ndarray:
    """Logits A min(t, t_clamp) + b; works on [n] or [batch, n] times."""
    t = np.minimum(np.asarray(hidden_times, dtype=np.float64), t_clamp)
    return t @ head_weights.T + head_bias


def softmax_xent(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Cross-entropy of one logit vector with its exact gradient."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or not 0 <= label < z.size:
        raise DimensionError("label must index the logits")
    m = float(np.max(z))
    lse = m + math.log(float(np.sum(np.exp(z - m))))
    grad = np.exp(z - lse)
    grad[label] -= 1.0
    return lse - float(z[label]), grad


def _xent_batch(logits: np.ndarray, labels: np.ndarray):
    m = np.max(logits, axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.sum(np.exp(logits - m), axis=1))
    losses = lse - np.take_along_axis(logits, labels[:, None], axis=1)[:, 0]
    grad = np.exp(logits - lse[:, None])
    grad[np.arange(len(labels)), labels] -= 1.0
    return losses, grad


# ---------------------------------------------------------------------------
# initialization, prediction, and the training loop
# ---------------------------------------------------------------------------


def initialize_weights(
    topology: Topology,
    spec: DistributionSpec,
    rng: np.random.Generator,
) -> WeightStack:
    """Draw a weight stack with per-layer fan-in scaling."""
    mats = []
    for ell in range(topology.num_layers):
        n_in = topology.layer_sizes[ell]
        n_out = topology.layer_sizes[ell + 1]
        mats.append(spec.sample(rng, (n_out, n_in), fan_in=n_in))
    return WeightStack(mats)


def predict_batch(
    params: NetworkParams,
    weights: WeightStack,
    inputs: np.ndarray,
    readout: str = "spike_times",
    head_weights: np.ndarray | None = None,
    head_bias: np.ndarray | None = None,
) -> np.ndarray:
    """Class predictions; ties resolve to the lowest class index."""
    trace = forward_batch(params, weights, inputs)
    times = trace.layers[-1].times
    if readout == "spike_times":
        return np.argmin(times, axis=1)
    logits = linear_head(times, head_weights, head_bias, _T_CLAMP_FACTOR * params.tau_s)
    return np.argmax(logits, axis=1)


def accuracy(
    params: NetworkParams,
    weights: WeightStack,
    samples: Sequence[Sample],
    readout: str = "spike_times",
    head_weights: np.ndarray | None = None,
    head_bias: np.ndarray | None = None,
) -> float:
    x, y = stack_features(samples)
    pred = predict_batch(params, weights, x, readout, head_weights, head_bias)
    return float(np.mean(pred == y))


def train(
    train_samples: Sequence[Sample],
    test_samples: Sequence[Sample] | None,
    topology: Topology,
    init: DistributionSpec,
    config: TrainConfig,
    params: NetworkParams | None = None,
    eval_hook: Callable[[int, WeightStack], None] | None = None,
) -> TrainResult:
    """Minibatch Adam over the analytic gradients.

    Shuffles with a seeded stream per epoch, averages gradients over
    each batch, evaluates test accuracy every eval_every epochs (and at
    the end), and tracks the best accuracy seen.  A non-finite loss
    aborts with a DivergenceError.  eval_hook, if given, runs at every
    evaluation point with the current effective weights.
    """
    if params is None:
        params = NetworkParams()
    xi = config.xi if config.xi is not None else 0.2 * params.tau_s
    t_clamp = _T_CLAMP_FACTOR * params.tau_s
    x_train, y_train = stack_features(train_samples)
    if x_train.shape[1] != topology.num_inputs:
        raise DimensionError("feature width does not match the topology")
    if int(np.max(y_train)) >= topology.num_outputs:
        raise InputError("labels exceed the output width")

    # With a linear head the declared final size is the head's output
    # width; the spiking stack stops at the last hidden layer and the
    # head reads those hidden spike times.
    net_topology = topology
    if config.readout == "linear_head":
        if len(topology.layer_sizes) < 3:
            raise DimensionError("a linear head needs at least one spiking layer")
        net_topology = Topology(topology.layer_sizes[:-1])

    rng_init = np.random.default_rng([config.seed, 0])
    rng_shuffle = np.random.default_rng([config.seed, 1])
    ws = initialize_weights(net_topology, init, rng_init)
    head_w = head_b = None
    arrays = list(ws.matrices)
    if config.readout == "linear_head":
        n_hidden = net_topology.num_outputs
        bound = 1.0 / math.sqrt(n_hidden)
        head_w = rng_init.uniform(-bound, bound, (topology.num_outputs, n_hidden))
        head_b = rng_init.uniform(-bound, bound, topology.num_outputs)
        arrays += [head_w, head_b]
    adam = AdamState.for_arrays(arrays)
    metrics = Metrics()
    result = TrainResult(ws, metrics, config, head_w, head_b)

    num = x_train.shape[0]
    for epoch in range(config.epochs):
        perm = rng_shuffle.permutation(num)
        epoch_losses = []
        for lo in range(0, num, config.batch_size):
            idx = perm[lo:lo + config.batch_size]
            xb, yb = x_train[idx], y_train[idx]
            nb = len(idx)
            eff = clamp_positive(ws) if config.positive_weights else ws
            trace = forward_batch(params, eff, xb)
            times = trace.layers[-1].times
            if config.readout == "spike_times":
                losses, g_times = _ttfs_batch(times, yb, xi)
            else:
                clamped = np.minimum(times, t_clamp)
                losses, g_logits = _xent_batch(clamped @ head_w.T + head_b, yb)
                g_times = (g_logits @ head_w) * (times < t_clamp)
            batch_loss = float(np.mean(losses))
            if not math.isfinite(batch_loss):
                raise DivergenceError(
                    f"non-finite loss {batch_loss} at epoch {epoch}, batch {lo // config.batch_size}"
                )
            epoch_losses.append(batch_loss)

            grads = backward_batch(trace, g_times / nb, params, eff)
            g_list = list(grads.weight_grads)
            if config.positive_weights:
                g_list = [g * (m > 0.0) for g, m in zip(g_list, ws.matrices)]
            if config.readout == "linear_head":
                g_list += [g_logits.T @ clamped / nb, g_logits.sum(axis=0) / nb]
            adam.update(arrays, g_list, config.learning_rate)

        metrics.train_loss.append(float(np.mean(epoch_losses)))
        last_epoch = epoch == config.epochs - 1
        if test_samples and ((epoch + 1) % config.eval_every == 0 or last_epoch):
            acc = accuracy(params, result.effective_weights, test_samples,
                           config.readout, head_w, head_b)
            metrics.eval_epochs.append(epoch)
            metrics.test_accuracy.append(acc)
            if acc > metrics.best_accuracy:
                metrics.best_accuracy = acc
                metrics.best_epoch = epoch
            if eval_hook is not None:
                eval_hook(epoch, result.effective_weights)
    result.adam = adam
    result.rng_state = rng_shuffle.bit_generator.state
    return result


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, result: TrainResult, params: NetworkParams) -> None:
    """Write a JSON checkpoint with everything needed to resume."""
    cfg = result.config
    blob: dict = {
        "format_version": 1,
        "layer_sizes": list(result.weights.topology.layer_sizes),
        "tau_s": params.tau_s,
        "theta": params.theta,
        "t_inf": params.t_inf,
        "delta_min": params.delta_min,
        "config": {
            "learning_rate": cfg.learning_rate,
            "batch_size": cfg.batch_size,
            "epochs": cfg.epochs,
            "xi": cfg.xi,
            "seed": cfg.seed,
            "positive_weights": cfg.positive_weights,
            "readout": cfg.readout,
            "eval_every": cfg.eval_every,
        },
        "weights": [m.tolist() for m in result.weights.matrices],
        "head_weights": None if result.head_weights is None else result.head_weights.tolist(),
        "head_bias": None if result.head_bias is None else result.head_bias.tolist(),
        "metrics": {
            "train_loss": result.metrics.train_loss,
            "eval_epochs": result.metrics.eval_epochs,
            "test_accuracy": result.metrics.test_accuracy,
            "best_accuracy": result.metrics.best_accuracy,
            "best_epoch": result.metrics.best_epoch,
        },
        "rng_state": result.rng_state,
    }
    if result.adam is not None:
        blob["adam"] = {
            "m": [a.tolist() for a in result.adam.m],
            "v": [a.tolist() for a in result.adam.v],
            "step": result.adam.step,
            "beta1": result.adam.beta1,
            "beta2": result.adam.beta2,
            "eps": result.adam.eps,
        }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(blob, fh)
        fh.write("\n")


def load_checkpoint(path) -> tuple[TrainResult, NetworkParams]:
    """Inverse of save_checkpoint."""
    with open(path, encoding="utf-8") as fh:
        blob = json.load(fh)
    if blob.get("format_version") != 1:
        raise InputError(f"unsupported checkpoint version {blob.get('format_version')!r}")
    params = NetworkParams(
        tau_s=blob["tau_s"], theta=blob["theta"],
        t_inf=blob["t_inf"], delta_min=blob["delta_min"],
    )
    config = TrainConfig(**blob["config"])
    weights = WeightStack([np.array(m, dtype=np.float64) for m in blob["weights"]])
    metrics = Metrics(**blob["metrics"])
    head_w = None if blob["head_weights"] is None else np.array(blob["head_weights"])
    head_b = None if blob["head_bias"] is None else np.array(blob["head_bias"])
    adam = None
    if "adam" in blob:
        a = blob["adam"]
        adam = AdamState(
            [np.array(x, dtype=np.float64) for x in a["m"]],
            [np.array(x, dtype=np.float64) for x in a["v"]],
            a["step"], a["beta1"], a["beta2"], a["eps"],
        )
    return (
        TrainResult(weights, metrics, config, head_w, head_b, adam, blob["rng_state"]),
        params,
    )
