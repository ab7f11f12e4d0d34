"""Exact event-driven simulation of single-spike nLIF networks.

A non-leaky integrate-and-fire neuron driven by exponential synaptic
kernels has the membrane potential

    u(t) = sum_{t_j <= t} W_j * (1 - exp(-(t - t_j) / tau_s))

which admits a closed-form first-crossing time once the set of inputs
arriving before the spike (the causal set) is known:

    t* = tau_s * (log(sum_{j in C} W_j e^{t_j / tau_s}) - log(sum_{j in C} W_j - theta))

The causal set is found by scanning sorted-input prefixes for the first
one whose weight sum clears the threshold and whose crossing time falls
inside the prefix window.  Neurons that never cross emit a large finite
sentinel time instead of spiking.

Two independent routes to the same spike time live here: the
closed-form solver (`solve_neuron`, `forward_network`, `forward_batch`)
and a numerical integrator (`integrate_oracle`) used to cross-check it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "NetworkParams",
    "Topology",
    "WeightStack",
    "NeuronTrace",
    "NetworkTrace",
    "LayerActivation",
    "BatchTrace",
    "DimensionError",
    "InputError",
    "membrane_potential",
    "solve_neuron",
    "forward_network",
    "forward_batch",
    "integrate_oracle",
]

# Left-edge slack for the prefix-window test.  The crossing time of the
# true causal prefix satisfies t* >= t_last exactly in real arithmetic;
# rounding may push the computed t* a hair below the window start, which
# would otherwise discard the prefix entirely.
_BOUNDARY_SLACK = 1e-12

# Cap on the temporary [batch, n_out, n_in] tensors in forward_batch.
_CHUNK_BUDGET = 4_194_304


class DimensionError(ValueError):
    """Shapes of weights / times / topology do not line up."""


class InputError(ValueError):
    """Input values violate a precondition (non-finite, negative, ...)."""


# ---------------------------------------------------------------------------
# parameter and weight containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NetworkParams:
    """Global neuron constants.

    tau_s      synaptic time constant of the exponential kernel
    theta      firing threshold
    t_inf      sentinel spike time standing in for "never spikes"; large
               enough that it can never enter a downstream causal set
    delta_min  guard on the weight-sum margin: a prefix only counts as
               crossing when sum(W) >= theta + delta_min, keeping the
               log in the closed form away from its singularity
    """

    tau_s: float = 0.5
    theta: float = 1.0
    t_inf: float | None = None
    delta_min: float = 1e-9

    def __post_init__(self) -> None:
        if self.tau_s <= 0.0:
            raise InputError("tau_s must be positive")
        if self.theta <= 0.0:
            raise InputError("theta must be positive")
        if self.delta_min <= 0.0:
            raise InputError("delta_min must be positive")
        if self.t_inf is None:
            object.__setattr__(self, "t_inf", 1000.0 * self.tau_s)
        if self.t_inf <= 0.0:
            raise InputError("t_inf must be positive")


@dataclass(frozen=True)
class Topology:
    """Layer sizes [N_0, N_1, ..., N_L]; N_0 is the input dimension."""

    layer_sizes: tuple[int, ...]

    def __post_init__(self) -> None:
        sizes = tuple(int(n) for n in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise DimensionError("topology needs at least input and one layer")
        if any(n < 1 for n in sizes):
            raise DimensionError("layer sizes must be >= 1")

    @property
    def num_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def num_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def num_outputs(self) -> int:
        return self.layer_sizes[-1]

    def fan_in(self, layer: int) -> int:
        return self.layer_sizes[layer]

    def __iter__(self):
        return iter(self.layer_sizes)


@dataclass
class WeightStack:
    """Dense per-layer weight matrices; matrix ell has shape N_ell x N_{ell-1}."""

    matrices: list[np.ndarray]

    def __post_init__(self) -> None:
        mats = [np.ascontiguousarray(m, dtype=np.float64) for m in self.matrices]
        for ell, m in enumerate(mats):
            if m.ndim != 2:
                raise DimensionError(f"weight matrix {ell} is not 2-d")
            if not np.all(np.isfinite(m)):
                raise InputError(f"weight matrix {ell} has non-finite entries")
        for ell in range(1, len(mats)):
            if mats[ell].shape[1] != mats[ell - 1].shape[0]:
                raise DimensionError(
                    f"weight matrix {ell} expects {mats[ell].shape[1]} inputs, "
                    f"previous layer has {mats[ell - 1].shape[0]} neurons"
                )
        self.matrices = mats

    @property
    def topology(self) -> Topology:
        sizes = (self.matrices[0].shape[1],) + tuple(m.shape[0] for m in self.matrices)
        return Topology(sizes)

    def copy(self) -> "WeightStack":
        return WeightStack([m.copy() for m in self.matrices])

    def __len__(self) -> int:
        return len(self.matrices)

    def __iter__(self):
        return iter(self.matrices)


# ---------------------------------------------------------------------------
# traces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NeuronTrace:
    """Outcome of solving one neuron.

    causal_set holds the presynaptic indices (strictly increasing) whose
    spikes arrive no later than the neuron's own spike; it is empty iff
    the neuron never crosses threshold, in which case spike_time is the
    sentinel.  weight_sum and exp_sum are the two prefix sums of the
    closed form, kept for gradient computation.
    """

    spike_time: float
    causal_set: tuple[int, ...]
    weight_sum: float
    exp_sum: float

    @property
    def spiked(self) -> bool:
        return len(self.causal_set) > 0


@dataclass(frozen=True)
class NetworkTrace:
    """Per-neuron traces of one sample's forward pass, layer by layer."""

    inputs: np.ndarray
    layers: tuple[tuple[NeuronTrace, ...], ...]

    def spike_times(self, layer: int) -> np.ndarray:
        return np.array([tr.spike_time for tr in self.layers[layer]])

    def causal_sets(self, layer: int) -> tuple[tuple[int, ...], ...]:
        return tuple(tr.causal_set for tr in self.layers[layer])

    @property
    def num_layers(self) -> int:
        return len(self.layers)


@dataclass
class LayerActivation:
    """Vectorised per-layer forward state for a batch of samples.

    times       [B, N_out] spike times (sentinel where silent)
    prefix_len  [B, N_out] causal-set size (0 where silent)
    order       [B, N_in]  stable argsort of the layer's input times
    rank        [B, N_in]  inverse of order: sorted position of input j
    weight_sum  [B, N_out] sum of weights over the causal set
    exp_sum     [B, N_out] sum of W_j e^{t_j/tau_s} over the causal set
    """

    times: np.ndarray
    prefix_len: np.ndarray
    order: np.ndarray
    rank: np.ndarray
    weight_sum: np.ndarray
    exp_sum: np.ndarray


@dataclass
class BatchTrace:
    """Forward pass of many samples at once; same content as a list of
    NetworkTrace objects, kept in arrays."""

    inputs: np.ndarray
    layers: list[LayerActivation]

    @property
    def num_samples(self) -> int:
        return self.inputs.shape[0]

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def spike_times(self, layer: int) -> np.ndarray:
        return self.layers[layer].times

    def input_times(self, layer: int) -> np.ndarray:
        """Times feeding layer `layer` (the previous layer's output)."""
        return self.inputs if layer == 0 else self.layers[layer - 1].times

    def set_sizes(self, layer: int) -> np.ndarray:
        return self.layers[layer].prefix_len

    def causal_set(self, sample: int, layer: int, neuron: int) -> tuple[int, ...]:
        act = self.layers[layer]
        k = int(act.prefix_len[sample, neuron])
        if k == 0:
            return ()
        idx = np.sort(act.order[sample, :k])
        return tuple(int(i) for i in idx)

    def sample_trace(self, sample: int) -> NetworkTrace:
        layers = []
        for act in self.layers:
            traces = []
            for i in range(act.times.shape[1]):
                k = int(act.prefix_len[sample, i])
                cset = ()
                if k:
                    cset = tuple(int(j) for j in np.sort(act.order[sample, :k]))
                traces.append(
                    NeuronTrace(
                        float(act.times[sample, i]),
                        cset,
                        float(act.weight_sum[sample, i]),
                        float(act.exp_sum[sample, i]),
                    )
                )
            layers.append(tuple(traces))
        return NetworkTrace(self.inputs[sample].copy(), tuple(layers))


# ---------------------------------------------------------------------------
# membrane potential and the closed-form solver
# ---------------------------------------------------------------------------


def _check_times(params: NetworkParams, times: Sequence[float]) -> np.ndarray:
    t = np.asarray(times, dtype=np.float64)
    if t.ndim != 1:
        raise DimensionError("input times must be a 1-d vector")
    if np.any(np.isnan(t)):
        raise InputError("input times contain NaN")
    if np.any(t < 0.0):
        raise InputError("input times must be non-negative (normalize first)")
    if np.any(t > params.t_inf):
        raise InputError("input times beyond the sentinel t_inf")
    return t


def membrane_potential(
    params: NetworkParams,
    input_times: Sequence[float],
    weights: Sequence[float],
    t: float,
) -> float:
    """Membrane potential u(t) of one neuron; sentinel inputs contribute 0."""
    times = _check_times(params, input_times)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != times.shape:
        raise DimensionError("weights and input times differ in length")
    if not np.isfinite(t):
        raise InputError("evaluation time must be finite")
    active = (times <= t) & (times < params.t_inf)
    if not np.any(active):
        return 0.0
    dt = t - times[active]
    return float(np.sum(w[active] * (1.0 - np.exp(-dt / params.tau_s))))


def solve_neuron(
    params: NetworkParams,
    input_times: Sequence[float],
    weight_row: Sequence[float],
) -> NeuronTrace:
    """Closed-form spike time of one neuron.

    Scans prefixes of the time-sorted inputs (stable sort, ties broken
    by original index).  A prefix of size m fires iff its weight sum
    clears theta + delta_min, its exponential sum is positive, and the
    closed-form time lands inside [t_m, t_{m+1}).  The first such prefix
    is the causal set; if none qualifies the neuron stays silent.
    """
    t = _check_times(params, input_times)
    w = np.asarray(weight_row, dtype=np.float64)
    if w.shape != t.shape:
        raise DimensionError("weight row and input times differ in length")
    if not np.all(np.isfinite(w)):
        raise InputError("weights must be finite")

    order = np.argsort(t, kind="stable")
    ts = t[order]
    ws = w[order]
    finite = ts < params.t_inf
    exp_ts = np.zeros_like(ts)
    exp_ts[finite] = np.exp(ts[finite] / params.tau_s)

    a_sum = np.cumsum(np.where(finite, ws, 0.0))
    b_sum = np.cumsum(ws * exp_ts)
    nxt = np.append(ts[1:], np.inf)

    for m in range(len(ts)):
        if not finite[m]:
            break  # sentinels sort last; no later prefix can fire
        denom = a_sum[m] - params.theta
        if denom < params.delta_min or b_sum[m] <= 0.0:
            continue
        if nxt[m] <= ts[m]:
            continue  # tied arrivals: the window [t_m, t_{m+1}) is empty
        tstar = params.tau_s * (np.log(b_sum[m]) - np.log(denom))
        if ts[m] - _BOUNDARY_SLACK <= tstar < nxt[m]:
            tstar = max(tstar, ts[m])
            cset = tuple(int(i) for i in np.sort(order[: m + 1]))
            return NeuronTrace(float(tstar), cset, float(a_sum[m]), float(b_sum[m]))
    return NeuronTrace(params.t_inf, (), 0.0, 0.0)


def forward_network(
    params: NetworkParams,
    weights: WeightStack,
    input_times: Sequence[float],
) -> NetworkTrace:
    """Layer-by-layer forward pass of one sample (reference implementation)."""
    t = _check_times(params, input_times)
    if t.shape[0] != weights.topology.num_inputs:
        raise DimensionError(
            f"expected {weights.topology.num_inputs} inputs, got {t.shape[0]}"
        )
    layers: list[tuple[NeuronTrace, ...]] = []
    current = t
    for mat in weights.matrices:
        traces = tuple(solve_neuron(params, current, mat[i]) for i in range(mat.shape[0]))
        layers.append(traces)
        current = np.array([tr.spike_time for tr in traces])
    return NetworkTrace(t.copy(), tuple(layers))


# ---------------------------------------------------------------------------
# vectorised batch forward
# ---------------------------------------------------------------------------


def _solve_layer_batch(
    params: NetworkParams,
    w: np.ndarray,
    t_prev: np.ndarray,
) -> LayerActivation:
    """Vectorised solve_neuron over a batch and a full layer."""
    batch, n_in = t_prev.shape
    n_out = w.shape[0]

    order = np.argsort(t_prev, axis=1, kind="stable").astype(np.int32)
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.arange(n_in, dtype=np.int32)[None, :], axis=1)

    times = np.full((batch, n_out), params.t_inf)
    plen = np.zeros((batch, n_out), dtype=np.int32)
    a_out = np.zeros((batch, n_out))
    b_out = np.zeros((batch, n_out))

    chunk = max(1, _CHUNK_BUDGET // max(1, n_out * n_in))
    for lo in range(0, batch, chunk):
        hi = min(batch, lo + chunk)
        t_s = np.take_along_axis(t_prev[lo:hi], order[lo:hi], axis=1)
        finite = t_s < params.t_inf
        e_s = np.zeros_like(t_s)
        e_s[finite] = np.exp(t_s[finite] / params.tau_s)

        w_s = np.take_along_axis(
            np.broadcast_to(w, (hi - lo, n_out, n_in)),
            order[lo:hi, None, :],
            axis=2,
        )
        a = np.cumsum(np.where(finite[:, None, :], w_s, 0.0), axis=2)
        b = np.cumsum(w_s * e_s[:, None, :], axis=2)

        denom = a - params.theta
        ok = (denom >= params.delta_min) & (b > 0.0) & finite[:, None, :]
        with np.errstate(invalid="ignore", divide="ignore"):
            tstar = params.tau_s * (
                np.log(np.where(b > 0.0, b, 1.0))
                - np.log(np.where(denom > 0.0, denom, 1.0))
            )
        nxt = np.concatenate(
            [t_s[:, 1:], np.full((hi - lo, 1), np.inf)], axis=1
        )[:, None, :]
        t_s3 = t_s[:, None, :]
        ok &= (tstar >= t_s3 - _BOUNDARY_SLACK) & (tstar < nxt) & (nxt > t_s3)

        any_ok = ok.any(axis=2)
        m = np.argmax(ok, axis=2)
        bi = np.arange(hi - lo)[:, None], np.arange(n_out)[None, :]
        sel_t = np.maximum(tstar[bi[0], bi[1], m], t_s[np.arange(hi - lo)[:, None], m])
        times[lo:hi] = np.where(any_ok, sel_t, params.t_inf)
        plen[lo:hi] = np.where(any_ok, m + 1, 0)
        a_out[lo:hi] = np.where(any_ok, a[bi[0], bi[1], m], 0.0)
        b_out[lo:hi] = np.where(any_ok, b[bi[0], bi[1], m], 0.0)

    return LayerActivation(times, plen, order, rank, a_out, b_out)


def forward_batch(
    params: NetworkParams,
    weights: WeightStack,
    inputs: np.ndarray,
) -> BatchTrace:
    """Forward pass of a [batch, N_0] matrix of input spike times."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError("batch inputs must be 2-d [samples, inputs]")
    if x.shape[1] != weights.topology.num_inputs:
        raise DimensionError(
            f"expected {weights.topology.num_inputs} inputs, got {x.shape[1]}"
        )
    if np.any(np.isnan(x)):
        raise InputError("input times contain NaN")
    if np.any(x < 0.0):
        raise InputError("input times must be non-negative (normalize first)")
    if np.any(x > params.t_inf):
        raise InputError("input times beyond the sentinel t_inf")

    layers: list[LayerActivation] = []
    current = x
    for mat in weights.matrices:
        act = _solve_layer_batch(params, mat, current)
        layers.append(act)
        current = act.times
    return BatchTrace(x, layers)


# ---------------------------------------------------------------------------
# numerical oracle
# ---------------------------------------------------------------------------


def integrate_oracle(
    params: NetworkParams,
    input_times: Sequence[float],
    weight_row: Sequence[float],
    dt: float = 1e-3,
) -> float:
    """Spike time by numerical integration of du/dt; sentinel if no crossing.

    Marches forward-Euler steps of du/dt = sum_j W_j e^{-(t-t_j)/tau_s}/tau_s
    (arrived inputs only) until the threshold is reached or the horizon
    10*max(input) + 20*tau_s passes.  Between consecutive arrivals the
    exact potential a - s*e^{-t/tau_s} is monotone, so the crossing
    bracket is verified on the exact potential at segment boundaries
    (catching any detection the Euler state misses) and the returned
    time is refined by bisection on the exact potential, making the
    result accurate to the bisection tolerance regardless of dt.
    """
    t = _check_times(params, input_times)
    w = np.asarray(weight_row, dtype=np.float64)
    if w.shape != t.shape:
        raise DimensionError("weight row and input times differ in length")
    if not np.all(np.isfinite(w)):
        raise InputError("weights must be finite")
    if dt <= 0.0:
        raise InputError("dt must be positive")

    finite = t < params.t_inf
    if not np.any(finite):
        return params.t_inf
    tf = t[finite]
    wf = w[finite]
    horizon = 10.0 * float(np.max(tf)) + 20.0 * params.tau_s

    # merge arrivals into (time, weight-sum, exp-weighted-sum) events
    order = np.argsort(tf, kind="stable")
    ev_t: list[float] = []
    ev_w: list[float] = []
    ev_s: list[float] = []
    for i in order:
        ti = float(tf[i])
        contrib = float(wf[i] * np.exp(tf[i] / params.tau_s))
        if ev_t and ti == ev_t[-1]:
            ev_w[-1] += float(wf[i])
            ev_s[-1] += contrib
        else:
            ev_t.append(ti)
            ev_w.append(float(wf[i]))
            ev_s.append(contrib)

    tau = params.tau_s
    theta = params.theta

    def u_exact(a: float, s: float, at: float) -> float:
        return a - s * np.exp(-at / tau)

    def bisect(a: float, s: float, lo: float, hi: float) -> float:
        # u is monotone on [lo, hi] with u(lo) < theta <= u(hi)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if hi - lo < 1e-13:
                break
            if u_exact(a, s, mid) >= theta:
                hi = mid
            else:
                lo = mid
        return 0.5 * (lo + hi)

    a_act = 0.0  # sum of arrived weights
    s_act = 0.0  # sum of arrived W_j e^{t_j/tau}
    u = 0.0  # Euler state, resynced to the exact potential at each arrival
    for k in range(len(ev_t)):
        seg_lo = ev_t[k]
        a_act += ev_w[k]
        s_act += ev_s[k]
        seg_hi = ev_t[k + 1] if k + 1 < len(ev_t) else horizon
        if seg_hi > horizon:
            seg_hi = horizon
        if u >= theta:
            # crossed exactly at the segment boundary
            return seg_lo
        cur = seg_lo
        while cur < seg_hi:
            step = min(dt, seg_hi - cur)
            u += step * s_act * np.exp(-cur / tau) / tau
            cur += step
            if u >= theta:
                if u_exact(a_act, s_act, cur) >= theta:
                    return bisect(a_act, s_act, seg_lo, cur)
                u = u_exact(a_act, s_act, cur)  # false alarm: resync
        # segment-end backstop on the exact potential
        if u_exact(a_act, s_act, seg_hi) >= theta:
            return bisect(a_act, s_act, seg_lo, seg_hi)
        u = u_exact(a_act, s_act, seg_hi)
        if seg_lo >= horizon:
            break
    return params.t_inf
