"""Single-cell recurrent networks: parameters, forward dynamics, exact counters.

Three cell kinds share one parameter layout convention: per-gate input
weights W_g (H x 2, one-hot bracket input), recurrent weights U_g (H x H),
biases b_g (H,), plus an affine output head V (2 x H), c (2,) whose two
logits are squashed independently to open-valid / close-valid probabilities.

Hidden size H=1 is the configuration of interest everywhere; a scalar fast
path (`_forward_h1`) mirrors the array math exactly and is dispatched
automatically. Tests assert both paths agree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .dyck import Token
from .errors import NonFinite


class CellKind(str, Enum):
    LSTM = "LSTM"
    GRU = "GRU"
    RELU = "RELU"


class OutputActivation(str, Enum):
    """Squashing applied to the LSTM cell value before output gating."""

    TANH = "TANH"
    IDENTITY = "IDENTITY"


GATES: dict[CellKind, tuple[str, ...]] = {
    CellKind.LSTM: ("i", "f", "o", "c"),  # c is the tanh candidate
    CellKind.GRU: ("z", "r", "h"),  # h is the tanh candidate
    CellKind.RELU: ("h",),
}


def weight_shapes(kind: CellKind, hidden: int) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for g in GATES[kind]:
        shapes[f"W_{g}"] = (hidden, 2)
        shapes[f"U_{g}"] = (hidden, hidden)
        shapes[f"b_{g}"] = (hidden,)
    shapes["V"] = (2, hidden)
    shapes["c"] = (2,)
    return shapes


@dataclass
class ParamSet:
    """All weights of one cell plus its output head. Treated as immutable."""

    kind: CellKind
    hidden: int
    out_activation: OutputActivation
    weights: dict[str, np.ndarray]

    def __post_init__(self):
        expected = weight_shapes(self.kind, self.hidden)
        if set(self.weights) != set(expected):
            raise ValueError(
                f"parameter names {sorted(self.weights)} != expected {sorted(expected)}"
            )
        for name, shape in expected.items():
            if self.weights[name].shape != shape:
                raise ValueError(f"{name} has shape {self.weights[name].shape}, want {shape}")
            if not np.isfinite(self.weights[name]).all():
                raise ValueError(f"{name} contains non-finite entries")

    def copy(self) -> "ParamSet":
        return ParamSet(
            self.kind,
            self.hidden,
            self.out_activation,
            {k: v.copy() for k, v in self.weights.items()},
        )


@dataclass
class CellState:
    h: np.ndarray
    c: np.ndarray  # length 0 unless LSTM


def zero_state(kind: CellKind, hidden: int) -> CellState:
    c_len = hidden if kind is CellKind.LSTM else 0
    return CellState(np.zeros(hidden), np.zeros(c_len))


@dataclass
class ForwardTrace:
    """Per-timestep states, gate activations, and output probabilities."""

    kind: CellKind
    hidden: int
    h: np.ndarray  # (T, H)
    c: np.ndarray  # (T, H) for LSTM else (T, 0)
    gates: dict[str, np.ndarray]  # gate name -> (T, H); empty for RELU
    logits: np.ndarray  # (T, 2)
    probs: np.ndarray  # (T, 2)

    def __len__(self) -> int:
        return self.h.shape[0]


def init_params(
    kind: CellKind,
    hidden: int = 1,
    seed: int = 0,
    out_activation: OutputActivation = OutputActivation.TANH,
) -> ParamSet:
    """Uniform weights in [-1/sqrt(H), 1/sqrt(H)], zero biases, seed-deterministic."""
    if hidden < 1:
        raise ValueError("hidden must be >= 1")
    rng = np.random.default_rng(seed)
    bound = 1.0 / math.sqrt(hidden)
    weights: dict[str, np.ndarray] = {}
    for name, shape in weight_shapes(kind, hidden).items():
        if name.startswith(("b_",)) or name == "c":
            weights[name] = np.zeros(shape)
        else:
            weights[name] = rng.uniform(-bound, bound, size=shape)
    return ParamSet(kind, hidden, out_activation, weights)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _sig(x: float) -> float:
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    ex = math.exp(x)
    return ex / (1.0 + ex)


def token_ids(tokens) -> list[int]:
    return [int(t) for t in tokens]


def step(
    params: ParamSet, state: CellState, token: Token | int
) -> tuple[CellState, dict[str, np.ndarray], np.ndarray]:
    """One cell update. Returns (new state, gate activations, output logits)."""
    w = params.weights
    x = int(token)
    h_prev = state.h
    gates: dict[str, np.ndarray] = {}

    if params.kind is CellKind.RELU:
        a = w["W_h"][:, x] + w["U_h"] @ h_prev + w["b_h"]
        h = np.maximum(a, 0.0)
        c = state.c
    elif params.kind is CellKind.LSTM:
        i = sigmoid(w["W_i"][:, x] + w["U_i"] @ h_prev + w["b_i"])
        f = sigmoid(w["W_f"][:, x] + w["U_f"] @ h_prev + w["b_f"])
        o = sigmoid(w["W_o"][:, x] + w["U_o"] @ h_prev + w["b_o"])
        g = np.tanh(w["W_c"][:, x] + w["U_c"] @ h_prev + w["b_c"])
        c = f * state.c + i * g
        hc = np.tanh(c) if params.out_activation is OutputActivation.TANH else c
        h = o * hc
        gates = {"i": i, "f": f, "o": o, "c": g}
    else:  # GRU
        z = sigmoid(w["W_z"][:, x] + w["U_z"] @ h_prev + w["b_z"])
        r = sigmoid(w["W_r"][:, x] + w["U_r"] @ h_prev + w["b_r"])
        g = np.tanh(w["W_h"][:, x] + w["U_h"] @ (r * h_prev) + w["b_h"])
        h = (1.0 - z) * h_prev + z * g
        c = state.c
        gates = {"z": z, "r": r, "h": g}

    logits = w["V"] @ h + w["c"]
    if not (np.isfinite(h).all() and np.isfinite(c).all() and np.isfinite(logits).all()):
        raise NonFinite(0, "state or logit")
    return CellState(h, c), gates, logits


def _forward_generic(params: ParamSet, toks: list[int]) -> ForwardTrace:
    T = len(toks)
    H = params.hidden
    state = zero_state(params.kind, H)
    gate_names = () if params.kind is CellKind.RELU else GATES[params.kind]
    h_arr = np.empty((T, H))
    c_arr = np.empty((T, H if params.kind is CellKind.LSTM else 0))
    gate_arrs = {g: np.empty((T, H)) for g in gate_names}
    logits = np.empty((T, 2))
    for t, x in enumerate(toks):
        try:
            state, gates, lg = step(params, state, x)
        except NonFinite:
            raise NonFinite(t, "state or logit") from None
        h_arr[t] = state.h
        if c_arr.shape[1]:
            c_arr[t] = state.c
        for g in gate_names:
            gate_arrs[g][t] = gates[g]
        logits[t] = lg
    return ForwardTrace(params.kind, H, h_arr, c_arr, gate_arrs, logits, sigmoid(logits))


class _H1Scalars:
    """Flat float view of an H=1 ParamSet for the scalar fast path."""

    __slots__ = (
        "kind", "tanh_out",
        "wx", "u", "b",  # per gate: (w_open, w_close), u, b  in GATES order
        "v0", "v1", "c0", "c1",
    )

    def __init__(self, params: ParamSet):
        w = params.weights
        self.kind = params.kind
        self.tanh_out = params.out_activation is OutputActivation.TANH
        self.wx = [(float(w[f"W_{g}"][0, 0]), float(w[f"W_{g}"][0, 1])) for g in GATES[params.kind]]
        self.u = [float(w[f"U_{g}"][0, 0]) for g in GATES[params.kind]]
        self.b = [float(w[f"b_{g}"][0]) for g in GATES[params.kind]]
        self.v0 = float(w["V"][0, 0])
        self.v1 = float(w["V"][1, 0])
        self.c0 = float(w["c"][0])
        self.c1 = float(w["c"][1])


def _forward_h1_lists(params: ParamSet, toks: list[int]) -> dict[str, list[float]]:
    """Scalar forward for H=1; returns per-timestep series as float lists."""
    p = _H1Scalars(params)
    kind = p.kind
    out: dict[str, list[float]] = {g: [] for g in GATES[kind] if kind is not CellKind.RELU}
    hs: list[float] = []
    cs: list[float] = []
    l0s: list[float] = []
    l1s: list[float] = []
    h = 0.0
    c = 0.0
    exp = math.exp
    tanh = math.tanh

    if kind is CellKind.RELU:
        (w_open, w_close), = p.wx
        (u,), (b,) = p.u, p.b
        for t, x in enumerate(toks):
            a = (w_open if x == 0 else w_close) + u * h + b
            h = a if a > 0.0 else 0.0
            if not math.isfinite(h):
                raise NonFinite(t, "state")
            hs.append(h)
            l0s.append(p.v0 * h + p.c0)
            l1s.append(p.v1 * h + p.c1)
    elif kind is CellKind.LSTM:
        (wi0, wi1), (wf0, wf1), (wo0, wo1), (wg0, wg1) = p.wx
        ui, uf, uo, ug = p.u
        bi, bf, bo, bg = p.b
        i_l, f_l, o_l, g_l = out["i"], out["f"], out["o"], out["c"]
        tanh_out = p.tanh_out
        for t, x in enumerate(toks):
            if x == 0:
                ai, af, ao, ag = wi0, wf0, wo0, wg0
            else:
                ai, af, ao, ag = wi1, wf1, wo1, wg1
            i = _sig(ai + ui * h + bi)
            f = _sig(af + uf * h + bf)
            o = _sig(ao + uo * h + bo)
            g = tanh(ag + ug * h + bg)
            c = f * c + i * g
            h = o * (tanh(c) if tanh_out else c)
            if not (math.isfinite(h) and math.isfinite(c)):
                raise NonFinite(t, "state")
            i_l.append(i); f_l.append(f); o_l.append(o); g_l.append(g)
            cs.append(c)
            hs.append(h)
            l0s.append(p.v0 * h + p.c0)
            l1s.append(p.v1 * h + p.c1)
    else:  # GRU
        (wz0, wz1), (wr0, wr1), (wg0, wg1) = p.wx
        uz, ur, ug = p.u
        bz, br, bg = p.b
        z_l, r_l, g_l = out["z"], out["r"], out["h"]
        for t, x in enumerate(toks):
            if x == 0:
                az, ar, ag = wz0, wr0, wg0
            else:
                az, ar, ag = wz1, wr1, wg1
            z = _sig(az + uz * h + bz)
            r = _sig(ar + ur * h + br)
            g = tanh(ag + ug * (r * h) + bg)
            h = (1.0 - z) * h + z * g
            if not math.isfinite(h):
                raise NonFinite(t, "state")
            z_l.append(z); r_l.append(r); g_l.append(g)
            hs.append(h)
            l0s.append(p.v0 * h + p.c0)
            l1s.append(p.v1 * h + p.c1)

    out["h_state"] = hs
    out["c_state"] = cs
    out["logit0"] = l0s
    out["logit1"] = l1s
    return out


def _trace_from_lists(params: ParamSet, series: dict[str, list[float]]) -> ForwardTrace:
    T = len(series["h_state"])
    h = np.asarray(series["h_state"]).reshape(T, 1)
    if params.kind is CellKind.LSTM:
        c = np.asarray(series["c_state"]).reshape(T, 1)
    else:
        c = np.empty((T, 0))
    gate_names = () if params.kind is CellKind.RELU else GATES[params.kind]
    gates = {g: np.asarray(series[g]).reshape(T, 1) for g in gate_names}
    logits = np.column_stack([series["logit0"], series["logit1"]])
    return ForwardTrace(params.kind, 1, h, c, gates, logits, sigmoid(logits))


def forward(params: ParamSet, tokens) -> ForwardTrace:
    """Run the cell from the zero state over a token sequence."""
    toks = token_ids(tokens)
    if not toks:
        raise ValueError("tokens must be non-empty")
    if params.hidden == 1:
        return _trace_from_lists(params, _forward_h1_lists(params, toks))
    return _forward_generic(params, toks)


# --- analytic counters -----------------------------------------------------


@dataclass(frozen=True)
class CounterSpec:
    """m: counting increment of the linear counter; scale: gate saturation sharpness."""

    m: float = 1.0
    scale: float = 8.0

    def __post_init__(self):
        if not self.m > 0:
            raise ValueError("m must be positive")
        if not self.scale > 0:
            raise ValueError("scale must be positive")


def _head(unit: float) -> dict[str, np.ndarray]:
    """Open logit fixed at +10; close logit crosses 0 exactly at h = unit/2."""
    return {
        "V": np.array([[0.0], [20.0 / unit]]),
        "c": np.array([10.0, -10.0]),
    }


def make_relu_counter(spec: CounterSpec) -> ParamSet:
    """H=1 network whose state counts depth exactly: +m per open, -m per close."""
    m = spec.m
    weights = {
        "W_h": np.array([[m, -m]]),
        "U_h": np.array([[1.0]]),
        "b_h": np.array([0.0]),
        **_head(m),
    }
    return ParamSet(CellKind.RELU, 1, OutputActivation.TANH, weights)


def make_saturated_lstm_counter(spec: CounterSpec) -> ParamSet:
    """H=1 LSTM whose gates sit at sigmoid(s); counts exactly only as s -> inf.

    All of i, f, o receive constant pre-activation +s; the candidate receives
    +s on open and -s on close, so the cell value gains roughly
    sigmoid(s)*tanh(s) per open and loses the same per close. The head reads
    h_t = sigmoid(s) * c_t without squashing, with its decision threshold at
    half the single-open step sigmoid(s)^2 * tanh(s).
    """
    s = spec.scale
    sig_s = _sig(s)
    unit = sig_s * sig_s * math.tanh(s)
    zeros_w = np.zeros((1, 2))
    zeros_u = np.zeros((1, 1))
    weights = {
        "W_i": zeros_w.copy(), "U_i": zeros_u.copy(), "b_i": np.array([s]),
        "W_f": zeros_w.copy(), "U_f": zeros_u.copy(), "b_f": np.array([s]),
        "W_o": zeros_w.copy(), "U_o": zeros_u.copy(), "b_o": np.array([s]),
        "W_c": np.array([[s, -s]]), "U_c": zeros_u.copy(), "b_c": np.array([0.0]),
        **_head(unit),
    }
    return ParamSet(CellKind.LSTM, 1, OutputActivation.IDENTITY, weights)
