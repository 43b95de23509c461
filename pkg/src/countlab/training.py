"""Exact gradients through time, Adam, and the online training loop.

Gradients are hand-accumulated in reverse over the cell equations; the
finite-difference checker below is the independent oracle for them. Training
is online: one optimizer update per sequence, full-sequence backpropagation,
epoch order shuffled from a per-epoch stream derived from the run seed (so an
interrupted run resumes bit-identically from its last checkpoint).
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import runio
from .cells import (
    GATES,
    CellKind,
    ForwardTrace,
    OutputActivation,
    ParamSet,
    _forward_generic,
    _forward_h1_lists,
    _sig,
    forward,
    init_params,
    sigmoid,
    token_ids,
    weight_shapes,
)
from .dyck import DatasetSplit, GenSpec, TargetSeq, generate_word, next_targets
from .errors import LengthMismatch, NonFinite

GradSet = dict[str, np.ndarray]


class LossKind(str, Enum):
    MSE = "MSE"  # mean over timesteps and outputs of squared error
    BCE = "BCE"  # per-output binary cross-entropy, same normalization


_BCE_CLAMP = 1e-12


def _loss_from_probs(probs: np.ndarray, tgt: np.ndarray, loss: LossKind) -> float:
    if loss is LossKind.MSE:
        return float(np.mean((probs - tgt) ** 2))
    y = np.clip(probs, _BCE_CLAMP, 1.0 - _BCE_CLAMP)
    return float(np.mean(-(tgt * np.log(y) + (1.0 - tgt) * np.log1p(-y))))


def sequence_loss(trace: ForwardTrace, targets: TargetSeq, loss: LossKind = LossKind.MSE) -> float:
    """Mean over timesteps of the mean over both outputs of the per-output error."""
    if len(trace) != len(targets):
        raise LengthMismatch(f"trace length {len(trace)} != targets length {len(targets)}")
    return _loss_from_probs(trace.probs, targets.arr, loss)


def _dlogits(probs: np.ndarray, tgt: np.ndarray, loss: LossKind) -> np.ndarray:
    T = probs.shape[0]
    if loss is LossKind.MSE:
        return (probs - tgt) * probs * (1.0 - probs) / T
    return (probs - tgt) / (2.0 * T)


def zero_grads(params: ParamSet) -> GradSet:
    return {k: np.zeros_like(v) for k, v in params.weights.items()}


def _bptt_generic(
    params: ParamSet, toks: list[int], tgt: np.ndarray, loss: LossKind
) -> tuple[float, GradSet]:
    trace = _forward_generic(params, toks)
    T, H = len(toks), params.hidden
    w = params.weights
    loss_val = _loss_from_probs(trace.probs, tgt, loss)
    dlog = _dlogits(trace.probs, tgt, loss)  # (T, 2)

    grads = zero_grads(params)
    grads["V"] += dlog.T @ trace.h
    grads["c"] += dlog.sum(axis=0)
    dh_head = dlog @ w["V"]  # (T, H)

    zeros = np.zeros(H)
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    kind = params.kind
    tanh_out = params.out_activation is OutputActivation.TANH

    for t in range(T - 1, -1, -1):
        x = toks[t]
        h_prev = trace.h[t - 1] if t else zeros
        dh = dh_head[t] + dh_next

        if kind is CellKind.RELU:
            da = dh * (trace.h[t] > 0.0)
            grads["W_h"][:, x] += da
            grads["U_h"] += np.outer(da, h_prev)
            grads["b_h"] += da
            dh_next = w["U_h"].T @ da

        elif kind is CellKind.LSTM:
            i = trace.gates["i"][t]
            f = trace.gates["f"][t]
            o = trace.gates["o"][t]
            g = trace.gates["c"][t]
            c_t = trace.c[t]
            c_prev = trace.c[t - 1] if t else zeros
            if tanh_out:
                hc = np.tanh(c_t)
                dc = dc_next + dh * o * (1.0 - hc * hc)
            else:
                hc = c_t
                dc = dc_next + dh * o
            do = dh * hc
            di = dc * g
            df = dc * c_prev
            dg = dc * i
            dc_next = dc * f
            dh_next = np.zeros(H)
            for name, dgate, act in (("i", di, i), ("f", df, f), ("o", do, o)):
                da = dgate * act * (1.0 - act)
                grads[f"W_{name}"][:, x] += da
                grads[f"U_{name}"] += np.outer(da, h_prev)
                grads[f"b_{name}"] += da
                dh_next += w[f"U_{name}"].T @ da
            da = dg * (1.0 - g * g)
            grads["W_c"][:, x] += da
            grads["U_c"] += np.outer(da, h_prev)
            grads["b_c"] += da
            dh_next += w["U_c"].T @ da

        else:  # GRU
            z = trace.gates["z"][t]
            r = trace.gates["r"][t]
            g = trace.gates["h"][t]
            dz = dh * (g - h_prev)
            dg = dh * z
            dh_prev = dh * (1.0 - z)
            da_g = dg * (1.0 - g * g)
            grads["W_h"][:, x] += da_g
            grads["U_h"] += np.outer(da_g, r * h_prev)
            grads["b_h"] += da_g
            drh = w["U_h"].T @ da_g
            dr = drh * h_prev
            dh_prev = dh_prev + drh * r
            for name, dgate, act in (("z", dz, z), ("r", dr, r)):
                da = dgate * act * (1.0 - act)
                grads[f"W_{name}"][:, x] += da
                grads[f"U_{name}"] += np.outer(da, h_prev)
                grads[f"b_{name}"] += da
                dh_prev = dh_prev + w[f"U_{name}"].T @ da
            dh_next = dh_prev

    return loss_val, grads


def _bptt_h1(
    params: ParamSet, toks: list[int], tgt: np.ndarray, loss: LossKind
) -> tuple[float, GradSet]:
    """Scalar-arithmetic twin of `_bptt_generic` for H=1."""
    s = _forward_h1_lists(params, toks)
    T = len(toks)
    hs = s["h_state"]
    t0, t1 = tgt[:, 0].tolist(), tgt[:, 1].tolist()
    y0 = [_sig(v) for v in s["logit0"]]
    y1 = [_sig(v) for v in s["logit1"]]

    loss_val = 0.0
    dz0 = [0.0] * T
    dz1 = [0.0] * T
    if loss is LossKind.MSE:
        inv_t = 1.0 / T
        for t in range(T):
            e0, e1 = y0[t] - t0[t], y1[t] - t1[t]
            loss_val += e0 * e0 + e1 * e1
            dz0[t] = e0 * y0[t] * (1.0 - y0[t]) * inv_t
            dz1[t] = e1 * y1[t] * (1.0 - y1[t]) * inv_t
        loss_val /= 2.0 * T
    else:
        inv_2t = 1.0 / (2.0 * T)
        for t in range(T):
            a = min(max(y0[t], _BCE_CLAMP), 1.0 - _BCE_CLAMP)
            b = min(max(y1[t], _BCE_CLAMP), 1.0 - _BCE_CLAMP)
            loss_val -= t0[t] * math.log(a) + (1.0 - t0[t]) * math.log1p(-a)
            loss_val -= t1[t] * math.log(b) + (1.0 - t1[t]) * math.log1p(-b)
            dz0[t] = (y0[t] - t0[t]) * inv_2t
            dz1[t] = (y1[t] - t1[t]) * inv_2t
        loss_val *= inv_2t

    w = params.weights
    v0 = float(w["V"][0, 0])
    v1 = float(w["V"][1, 0])
    gV0 = gV1 = gc0 = gc1 = 0.0
    kind = params.kind
    gate_names = GATES[kind]
    n_gates = len(gate_names)
    gW = [[0.0, 0.0] for _ in range(n_gates)]
    gU = [0.0] * n_gates
    gb = [0.0] * n_gates
    u = [float(w[f"U_{g}"][0, 0]) for g in gate_names]

    dh_next = 0.0
    dc_next = 0.0
    tanh_out = params.out_activation is OutputActivation.TANH
    tanh = math.tanh

    for t in range(T - 1, -1, -1):
        x = toks[t]
        h_t = hs[t]
        h_prev = hs[t - 1] if t else 0.0
        d0, d1 = dz0[t], dz1[t]
        gV0 += d0 * h_t
        gV1 += d1 * h_t
        gc0 += d0
        gc1 += d1
        dh = d0 * v0 + d1 * v1 + dh_next

        if kind is CellKind.RELU:
            da = dh if h_t > 0.0 else 0.0
            gW[0][x] += da
            gU[0] += da * h_prev
            gb[0] += da
            dh_next = u[0] * da

        elif kind is CellKind.LSTM:
            i, f, o, g = s["i"][t], s["f"][t], s["o"][t], s["c"][t]
            c_t = s["c_state"][t]
            c_prev = s["c_state"][t - 1] if t else 0.0
            if tanh_out:
                hc = tanh(c_t)
                dc = dc_next + dh * o * (1.0 - hc * hc)
            else:
                hc = c_t
                dc = dc_next + dh * o
            do = dh * hc
            dc_next = dc * f
            dh_next = 0.0
            for gi, (dgate, act) in enumerate(((dc * g, i), (dc * c_prev, f), (do, o))):
                da = dgate * act * (1.0 - act)
                gW[gi][x] += da
                gU[gi] += da * h_prev
                gb[gi] += da
                dh_next += u[gi] * da
            da = dc * i * (1.0 - g * g)
            gW[3][x] += da
            gU[3] += da * h_prev
            gb[3] += da
            dh_next += u[3] * da

        else:  # GRU
            z, r, g = s["z"][t], s["r"][t], s["h"][t]
            dz = dh * (g - h_prev)
            dg = dh * z
            dh_prev = dh * (1.0 - z)
            da_g = dg * (1.0 - g * g)
            gW[2][x] += da_g
            gU[2] += da_g * (r * h_prev)
            gb[2] += da_g
            drh = u[2] * da_g
            dr = drh * h_prev
            dh_prev += drh * r
            for gi, (dgate, act) in enumerate(((dz, z), (dr, r))):
                da = dgate * act * (1.0 - act)
                gW[gi][x] += da
                gU[gi] += da * h_prev
                gb[gi] += da
                dh_prev += u[gi] * da
            dh_next = dh_prev

    grads: GradSet = {}
    for gi, g in enumerate(gate_names):
        grads[f"W_{g}"] = np.array([gW[gi]])
        grads[f"U_{g}"] = np.array([[gU[gi]]])
        grads[f"b_{g}"] = np.array([gb[gi]])
    grads["V"] = np.array([[gV0], [gV1]])
    grads["c"] = np.array([gc0, gc1])
    return loss_val, grads


def bptt_grads(
    params: ParamSet, tokens, targets: TargetSeq, loss: LossKind = LossKind.MSE
) -> tuple[float, GradSet]:
    """Loss and its exact gradient with respect to every parameter entry."""
    toks = token_ids(tokens)
    if len(toks) != len(targets):
        raise LengthMismatch(f"{len(toks)} tokens vs {len(targets)} targets")
    if params.hidden == 1:
        return _bptt_h1(params, toks, targets.arr, loss)
    return _bptt_generic(params, toks, targets.arr, loss)


def fd_check(
    params: ParamSet,
    tokens,
    targets: TargetSeq,
    h: float = 1e-5,
    loss: LossKind = LossKind.MSE,
) -> float:
    """Max relative error of BPTT against central differences over all entries.

    Relative error uses max(1, |fd|) in the denominator so near-zero gradients
    are compared absolutely. Sensible step sizes lie in [1e-7, 1e-3].
    """
    _, grads = bptt_grads(params, tokens, targets, loss)

    def loss_at(p: ParamSet) -> float:
        return sequence_loss(forward(p, tokens), targets, loss)

    worst = 0.0
    for name, arr in params.weights.items():
        flat = arr.ravel()
        g_flat = grads[name].ravel()
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            up = loss_at(params)
            flat[idx] = orig - h
            down = loss_at(params)
            flat[idx] = orig
            g_fd = (up - down) / (2.0 * h)
            err = abs(float(g_flat[idx]) - g_fd) / max(1.0, abs(g_fd))
            if err > worst:
                worst = err
    return worst


def gradcheck_suite(
    n_instances: int = 20,
    kinds: tuple[CellKind, ...] = (CellKind.LSTM, CellKind.GRU, CellKind.RELU),
    seed: int = 7,
    h: float = 1e-5,
    max_len: int = 12,
    hiddens: tuple[int, ...] = (1, 2),
) -> dict[CellKind, float]:
    """Worst fd_check error per kind over random instances with H in `hiddens`."""
    rng = random.Random(seed)
    worst: dict[CellKind, float] = {}
    for kind in kinds:
        errs = []
        for inst in range(n_instances):
            hidden = hiddens[inst % len(hiddens)]
            out_act = OutputActivation.IDENTITY if inst % 4 == 3 else OutputActivation.TANH
            params = init_params(kind, hidden, seed=rng.getrandbits(32), out_activation=out_act)
            # nonzero biases make the check point generic
            for name in list(params.weights):
                if name.startswith("b_") or name == "c":
                    params.weights[name] = params.weights[name] + np.array(
                        [rng.uniform(-0.5, 0.5) for _ in range(params.weights[name].size)]
                    ).reshape(params.weights[name].shape)
            length = 2 * rng.randint(1, max_len // 2)
            word = generate_word(GenSpec(1, 2, max(2, length), seed=rng.getrandbits(32)))
            errs.append(fd_check(params, word.tokens, next_targets(word), h=h))
        worst[kind] = max(errs)
    return worst


# --- Adam -------------------------------------------------------------------


@dataclass
class OptState:
    m: GradSet
    v: GradSet
    t: int = 0


def init_opt(params: ParamSet) -> OptState:
    return OptState(zero_grads(params), zero_grads(params), 0)


def adam_step(
    opt: OptState,
    params: ParamSet,
    grads: GradSet,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[OptState, ParamSet]:
    """Bias-corrected Adam update applied entrywise."""
    t = opt.t + 1
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    new_m: GradSet = {}
    new_v: GradSet = {}
    new_w: dict[str, np.ndarray] = {}
    for name, g in grads.items():
        m = beta1 * opt.m[name] + (1.0 - beta1) * g
        v = beta2 * opt.v[name] + (1.0 - beta2) * (g * g)
        new_m[name] = m
        new_v[name] = v
        new_w[name] = params.weights[name] - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return (
        OptState(new_m, new_v, t),
        ParamSet(params.kind, params.hidden, params.out_activation, new_w),
    )


# --- training runs -----------------------------------------------------------

DEFAULT_LR = {CellKind.LSTM: 0.01, CellKind.RELU: 0.01, CellKind.GRU: 0.001}
DEFAULT_CHECKPOINT_EPOCHS = (1, 5, 10, 15, 20, 25)


@dataclass(frozen=True)
class TrainConfig:
    kind: CellKind
    lr: float
    epochs: int = 30
    checkpoint_epochs: tuple[int, ...] = DEFAULT_CHECKPOINT_EPOCHS
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    hidden: int = 1
    loss: LossKind = LossKind.MSE
    out_activation: OutputActivation = OutputActivation.TANH

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("adam betas must lie in (0,1)")
        if not self.adam_eps > 0:
            raise ValueError("adam eps must be positive")
        if self.epochs < 1 or self.hidden < 1:
            raise ValueError("epochs and hidden must be >= 1")

    @classmethod
    def for_kind(cls, kind: CellKind, **overrides) -> "TrainConfig":
        overrides.setdefault("lr", DEFAULT_LR[kind])
        return cls(kind=kind, **overrides)

    def checkpoint_set(self) -> tuple[int, ...]:
        wanted = {e for e in self.checkpoint_epochs if 1 <= e <= self.epochs}
        wanted.add(self.epochs)
        return tuple(sorted(wanted))


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    val_loss: float
    checkpoint: Path | None = None


@dataclass
class RunRecord:
    run_id: str
    kind: CellKind
    seed: int
    epochs: list[EpochMetrics] = field(default_factory=list)
    failed: bool = False
    failure: str | None = None

    @property
    def best_epoch(self) -> int | None:
        """Argmin of validation loss over completed epochs; earliest on ties."""
        if not self.epochs:
            return None
        best = min(self.epochs, key=lambda em: (em.val_loss, em.epoch))
        return best.epoch

    @property
    def best_val_loss(self) -> float:
        return min(em.val_loss for em in self.epochs)

    def metrics_for(self, epoch: int) -> EpochMetrics:
        for em in self.epochs:
            if em.epoch == epoch:
                return em
        raise KeyError(f"epoch {epoch} not recorded for {self.run_id}")

    @property
    def best_checkpoint(self) -> Path | None:
        if self.best_epoch is None:
            return None
        candidates = [em for em in self.epochs if em.checkpoint is not None]
        if not candidates:
            return None
        best = min(candidates, key=lambda em: (em.val_loss, em.epoch))
        return best.checkpoint


def _prep_sequences(split: DatasetSplit) -> list[tuple[list[int], np.ndarray]]:
    return [(token_ids(w.tokens), next_targets(w).arr) for w in split.words]


def _mean_val_loss(params: ParamSet, seqs, loss: LossKind) -> float:
    # fixed sequence-index order keeps the reduction deterministic
    total = 0.0
    for toks, tgt in seqs:
        if params.hidden == 1:
            series = _forward_h1_lists(params, toks)
            logits = np.column_stack([series["logit0"], series["logit1"]])
        else:
            logits = _forward_generic(params, toks).logits
        total += _loss_from_probs(sigmoid(logits), tgt, loss)
    return total / len(seqs)


def save_checkpoint(
    path: Path,
    params: ParamSet,
    seed: int,
    epoch: int,
    run_id: str,
    train_loss: float,
    val_loss: float,
) -> None:
    doc = {
        "kind": params.kind.value,
        "hidden": params.hidden,
        "outputActivation": params.out_activation.value,
        "seed": seed,
        "epoch": epoch,
        "runId": run_id,
        "metrics": {"trainLoss": train_loss, "valLoss": val_loss},
        "params": {name: arr.ravel().tolist() for name, arr in params.weights.items()},
    }
    runio.atomic_write_json(path, doc)


def load_checkpoint(path: Path) -> tuple[ParamSet, dict]:
    doc = runio.read_json(path)
    kind = CellKind(doc["kind"])
    hidden = int(doc["hidden"])
    shapes = weight_shapes(kind, hidden)
    weights = {
        name: np.array(doc["params"][name], dtype=np.float64).reshape(shape)
        for name, shape in shapes.items()
    }
    params = ParamSet(kind, hidden, OutputActivation(doc["outputActivation"]), weights)
    return params, doc


def _opt_state_path(rdir: Path) -> Path:
    return Path(rdir) / "optstate.json"


def _save_opt_state(rdir: Path, opt: OptState, epoch: int) -> None:
    doc = {
        "epoch": epoch,
        "t": opt.t,
        "m": {k: v.ravel().tolist() for k, v in opt.m.items()},
        "v": {k: v.ravel().tolist() for k, v in opt.v.items()},
    }
    runio.atomic_write_json(_opt_state_path(rdir), doc)


def _load_opt_state(rdir: Path, params: ParamSet) -> tuple[OptState, int]:
    doc = runio.read_json(_opt_state_path(rdir))
    shapes = weight_shapes(params.kind, params.hidden)
    m = {k: np.array(doc["m"][k]).reshape(shapes[k]) for k in shapes}
    v = {k: np.array(doc["v"][k]).reshape(shapes[k]) for k in shapes}
    return OptState(m, v, int(doc["t"])), int(doc["epoch"])


def train_run(
    config: TrainConfig,
    train: DatasetSplit,
    val: DatasetSplit,
    out_dir: Path,
    run_id: str = "run-00",
    resume: bool = False,
) -> RunRecord:
    """Train one model online; checkpoint at configured epochs; record metrics.

    With resume=True and a previously written optimizer state in the run
    directory, continues after the last checkpointed epoch and reproduces the
    uninterrupted run exactly.
    """
    rdir = runio.run_dir(out_dir, config.kind.value, run_id)
    rdir.mkdir(parents=True, exist_ok=True)
    train_seqs = _prep_sequences(train)
    val_seqs = _prep_sequences(val)
    ckpt_epochs = set(config.checkpoint_set())

    record = RunRecord(run_id=run_id, kind=config.kind, seed=config.seed)
    params = init_params(config.kind, config.hidden, config.seed, config.out_activation)
    opt = init_opt(params)
    start_epoch = 1

    if resume and _opt_state_path(rdir).exists():
        _, last_epoch = _load_opt_state(rdir, params)
        params, _ = load_checkpoint(runio.checkpoint_path(rdir, last_epoch))
        opt, _ = _load_opt_state(rdir, params)
        start_epoch = last_epoch + 1
        for epoch, tr_loss, v_loss in runio.read_metrics(rdir):
            if epoch <= last_epoch:
                ckpt = runio.checkpoint_path(rdir, epoch)
                record.epochs.append(
                    EpochMetrics(epoch, tr_loss, v_loss, ckpt if ckpt.exists() else None)
                )

    n = len(train_seqs)
    for epoch in range(start_epoch, config.epochs + 1):
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        epoch_loss = 0.0
        try:
            for idx in order:
                toks, tgt = train_seqs[idx]
                seq_loss, grads = (
                    _bptt_h1(params, toks, tgt, config.loss)
                    if params.hidden == 1
                    else _bptt_generic(params, toks, tgt, config.loss)
                )
                epoch_loss += seq_loss
                opt, params = adam_step(
                    opt, params, grads, config.lr,
                    config.adam_beta1, config.adam_beta2, config.adam_eps,
                )
            val_loss = _mean_val_loss(params, val_seqs, config.loss)
        except (NonFinite, ValueError) as exc:
            record.failed = True
            record.failure = f"epoch {epoch}: {exc}"
            break
        train_loss = epoch_loss / n
        em = EpochMetrics(epoch, train_loss, val_loss)
        if epoch in ckpt_epochs:
            ckpt = runio.checkpoint_path(rdir, epoch)
            save_checkpoint(ckpt, params, config.seed, epoch, run_id, train_loss, val_loss)
            _save_opt_state(rdir, opt, epoch)
            em.checkpoint = ckpt
        record.epochs.append(em)
        runio.write_metrics(rdir, [(e.epoch, e.train_loss, e.val_loss) for e in record.epochs])
    return record


def select_best_runs(records: list[RunRecord], k: int) -> list[RunRecord]:
    """The k non-failed records with lowest best-epoch validation loss, ascending."""
    usable = [r for r in records if not r.failed and r.epochs]
    if k > len(usable):
        raise ValueError(f"asked for {k} runs but only {len(usable)} usable")
    return sorted(usable, key=lambda r: (r.best_val_loss, r.run_id))[:k]
