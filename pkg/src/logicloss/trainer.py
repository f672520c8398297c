"""A shared-encoder classifier with answer and task heads, trained three ways.

``original`` uses shuffled batches and the answer loss only; ``hybrid`` uses
hybrid batches (answer loss, plus the task loss with ``duo_task``); ``logic``
uses hybrid batches and ``beta * L_pairs + L_answer + L_task``.

Loss values and their derivatives with respect to the predicted
probabilities come from compiled autodiff graphs, evaluated over every
sample or family pair of a batch at once. Those derivatives are then pushed
through the softmax heads and the encoder by the hand-written chain rule in
:func:`backward`.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .batcher import QuestionRecord, build_hybrid_batches, group_families, validate_records
from .compiler import SampleOutputs, family_pairs, pair_loss_expr, total_loss
from .kb import EntailmentKB, builtin_kb
from .tnorms import Generator, semantics_from_name

__all__ = [
    "TrainConfig", "ModelParams", "Forward", "LossEngine", "BatchLoss", "NonFiniteLoss", "ShapeMismatch",
    "CURVE_COLUMNS", "MODES", "init_params", "forward", "backward", "sample_outputs", "train",
    "predict", "save_checkpoint", "load_checkpoint", "write_curves", "check_parameter_gradients",
]

MODES = ("original", "hybrid", "logic")
CURVE_COLUMNS = ("epoch", "answer_loss", "task_loss", "logic_loss", "answer_acc", "task_acc")
CHECKPOINT_VERSION = 1


class NonFiniteLoss(ArithmeticError):
    def __init__(self, epoch: int, batch: int, value: float):
        self.epoch, self.batch, self.value = epoch, batch, value
        super().__init__(f"non-finite loss {value} at epoch {epoch}, batch {batch}")


class ShapeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "logic"
    beta: float = 1.0
    semantics: str = "product"
    lam: float | None = None
    lr: float = 1e-4
    epochs: int = 60
    batch_size: int = 16
    seed: int = 42
    hidden: int = 64
    task_hidden: int = 16
    duo_task: bool = False
    include_task_antecedent: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.lr < 0 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("lr, epochs and batch_size must be non-negative (batch_size positive)")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")

    def generator(self) -> Generator:
        return semantics_from_name(self.semantics, self.lam).generator()

    @property
    def trains_task_head(self) -> bool:
        return self.mode == "logic" or (self.mode == "hybrid" and self.duo_task)


PARAM_NAMES = ("W1", "b1", "Wa", "ba", "Wt1", "bt1", "Wt2", "bt2")


@dataclass
class ModelParams:
    W1: np.ndarray
    b1: np.ndarray
    Wa: np.ndarray
    ba: np.ndarray
    Wt1: np.ndarray
    bt1: np.ndarray
    Wt2: np.ndarray
    bt2: np.ndarray
    answers: tuple[str, ...] = ()
    tasks: tuple[str, ...] = ()

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in PARAM_NAMES}

    def copy(self) -> "ModelParams":
        return replace(self, **{n: a.copy() for n, a in self.arrays().items()})

    @property
    def input_dim(self) -> int:
        return self.W1.shape[0]

    def schema_hash(self) -> str:
        shapes = {n: list(a.shape) for n, a in self.arrays().items()}
        blob = json.dumps({"shapes": shapes, "answers": list(self.answers), "tasks": list(self.tasks)}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def init_params(input_dim: int, answers: Sequence[str], tasks: Sequence[str], hidden: int = 64,
                task_hidden: int = 16, seed: int = 0) -> ModelParams:
    rng = np.random.default_rng(seed)

    def glorot(n_in, n_out):
        return rng.normal(0.0, math.sqrt(2.0 / (n_in + n_out)), (n_in, n_out))

    A, T = len(answers), len(tasks)
    return ModelParams(glorot(input_dim, hidden), np.zeros(hidden), glorot(hidden, A), np.zeros(A),
                       glorot(hidden, task_hidden), np.zeros(task_hidden), glorot(task_hidden, T), np.zeros(T),
                       tuple(answers), tuple(tasks))


class Forward(NamedTuple):
    answer_probs: np.ndarray
    task_probs: np.ndarray
    hidden: np.ndarray
    task_hidden: np.ndarray


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    # keep entries strictly positive so log-type generators stay finite
    return np.maximum(p, 1e-300)


def forward(params: ModelParams, X) -> Forward:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != params.input_dim:
        raise ShapeMismatch(f"features have dimension {X.shape[1]}, model expects {params.input_dim}")
    h = np.tanh(X @ params.W1 + params.b1)
    pa = _softmax(h @ params.Wa + params.ba)
    ht = np.tanh(h @ params.Wt1 + params.bt1)
    pt = _softmax(ht @ params.Wt2 + params.bt2)
    return Forward(pa, pt, h, ht)


def sample_outputs(fwd: Forward, gold_answers, gold_tasks) -> list[SampleOutputs]:
    return [SampleOutputs(fwd.answer_probs[i], fwd.task_probs[i], int(a), int(t))
            for i, (a, t) in enumerate(zip(gold_answers, gold_tasks))]


def _softmax_back(p: np.ndarray, dp: np.ndarray) -> np.ndarray:
    return p * (dp - (dp * p).sum(axis=1, keepdims=True))


def backward(params: ModelParams, X: np.ndarray, fwd: Forward, d_pa: np.ndarray,
             d_pt: np.ndarray | None) -> dict[str, np.ndarray]:
    """Parameter gradients given dL/d(answer probs) and dL/d(task probs)."""
    h = fwd.hidden
    dza = _softmax_back(fwd.answer_probs, d_pa)
    grads = {"Wa": h.T @ dza, "ba": dza.sum(axis=0)}
    dh = dza @ params.Wa.T
    if d_pt is not None:
        ht = fwd.task_hidden
        dzt = _softmax_back(fwd.task_probs, d_pt)
        grads["Wt2"], grads["bt2"] = ht.T @ dzt, dzt.sum(axis=0)
        dzt1 = (dzt @ params.Wt2.T) * (1.0 - ht * ht)
        grads["Wt1"], grads["bt1"] = h.T @ dzt1, dzt1.sum(axis=0)
        dh = dh + dzt1 @ params.Wt1.T
    dz1 = dh * (1.0 - h * h)
    grads["W1"], grads["b1"] = X.T @ dz1, dz1.sum(axis=0)
    return grads


class BatchLoss(NamedTuple):
    answer: float
    task: float
    logic: float
    total: float
    d_pa: np.ndarray
    d_pt: np.ndarray | None


class LossEngine:
    """Batch losses and probability gradients for one training configuration."""

    def __init__(self, config: TrainConfig, kb: EntailmentKB | None):
        self.config = config
        self.gen = config.generator()
        self.g = ad.compile_graph(self.gen.expr(ad.var("p")))
        self.kb = kb
        self.pair = None
        if config.mode == "logic":
            if kb is None or not kb.rules:
                raise ValueError("logic mode needs a knowledge base with rules")
            self.pair = ad.compile_graph(pair_loss_expr(kb, self.gen, config.include_task_antecedent))
            # each pair input reads one column of a per-sample row
            # [p(gold answer), p(gold task), p(task 0), ..., p(task T-1)]
            index = kb.task_index
            cols, sides = [], []
            for name in self.pair.inputs:
                if name in ("pa1", "pa2", "pt1", "pt2"):
                    cols.append(0 if name[1] == "a" else 1)
                    sides.append(int(name[-1]))
                else:
                    side, task = name.split(".", 1)
                    cols.append(2 + index[task])
                    sides.append(int(side[-1]))
            sides = np.array(sides)
            self._slots = [(np.flatnonzero(sides == k), np.array(cols)[sides == k]) for k in (1, 2)]
        self._pairs: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def _pair_index(self, n: int):
        if n not in self._pairs:
            p = np.array(family_pairs(n), dtype=int).reshape(-1, 2)
            self._pairs[n] = (p[:, 0], p[:, 1])
        return self._pairs[n]

    def _supervised(self, probs: np.ndarray):
        value, (grad,) = self.g({"p": probs})
        value = np.broadcast_to(value, probs.shape)
        return float(value.sum()), np.broadcast_to(grad, probs.shape)

    def __call__(self, fwd: Forward, gold_a: np.ndarray, gold_t: np.ndarray, n_family: int) -> BatchLoss:
        cfg = self.config
        rows = np.arange(len(gold_a))
        pa = fwd.answer_probs[rows, gold_a]
        pt = fwd.task_probs[rows, gold_t]
        ans_loss, d_ans = self._supervised(pa)
        task_loss, d_tsk = self._supervised(pt)
        d_pa = np.zeros_like(fwd.answer_probs)
        d_pa[rows, gold_a] = d_ans
        d_pt = None
        total = ans_loss
        if cfg.trains_task_head:
            d_pt = np.zeros_like(fwd.task_probs)
            d_pt[rows, gold_t] = d_tsk
            total += task_loss
        logic = 0.0
        if self.pair is not None and n_family > 1:
            I, J = self._pair_index(n_family)
            rowvals = np.column_stack([pa, pt, fwd.task_probs])
            values = {}
            for (slots, cols), idx in zip(self._slots, (I, J)):
                block = rowvals[idx][:, cols]
                for k, slot in enumerate(slots):
                    values[self.pair.inputs[slot]] = block[:, k]
            per_pair, grads = self.pair(values)
            logic = float(np.sum(per_pair) if np.ndim(per_pair) else per_pair * len(I))
            if not (self.gen.strict or logic < self.gen.g0):
                logic = self.gen.g0  # saturated: min(g0, .) passes no gradient
            elif cfg.beta != 0.0:
                d_rows = np.zeros_like(rowvals)
                for (slots, cols), idx in zip(self._slots, (I, J)):
                    block = np.empty((len(idx), len(slots)))
                    for k, slot in enumerate(slots):
                        block[:, k] = grads[slot]
                    np.add.at(d_rows, (idx[:, None], cols[None, :]), block)
                d_rows *= cfg.beta
                d_pa[rows, gold_a] += d_rows[:, 0]
                d_pt[rows, gold_t] += d_rows[:, 1]
                d_pt += d_rows[:, 2:]
            total += cfg.beta * logic
        return BatchLoss(ans_loss, task_loss, logic, total, d_pa, d_pt)


def reference_loss(params: ModelParams, X, gold_a, gold_t, n_family: int, config: TrainConfig,
                   kb: EntailmentKB | None) -> float:
    """The same batch loss through the generic compiler and interpreter."""
    fwd = forward(params, X)
    outs = sample_outputs(fwd, gold_a, gold_t)
    gen = config.generator()
    if config.mode == "logic":
        graph = total_loss(outs, family_pairs(n_family), kb, gen, config.beta, config.include_task_antecedent)
        return graph.value
    value = sum(gen(o.p_answer) for o in outs)
    if config.trains_task_head:
        value += sum(gen(o.p_task) for o in outs)
    return float(value)


def check_parameter_gradients(params: ModelParams, X, gold_a, gold_t, n_family: int, config: TrainConfig,
                              kb: EntailmentKB | None, n_params: int = 20, seed: int = 0,
                              h: float = 1e-6, tol: float = 1e-3) -> list[ad.GradientReport]:
    """Compare backpropagated gradients with central differences of the reference loss.

    Parameters are sampled among those the loss depends on; coordinates whose
    perturbation crosses a kink (a change of active rule or hinge) are
    resampled.
    """
    engine = LossEngine(config, kb)
    X = np.asarray(X, dtype=float)
    fwd = forward(params, X)
    loss = engine(fwd, gold_a, gold_t, n_family)
    grads = backward(params, X, fwd, loss.d_pa, loss.d_pt)
    rng = np.random.default_rng(seed)
    names = [n for n in PARAM_NAMES if n in grads]
    reports: list[ad.GradientReport] = []
    attempts = 0
    while len(reports) < n_params and attempts < 50 * n_params:
        attempts += 1
        name = names[rng.integers(len(names))]
        arr = getattr(params, name)
        k = tuple(int(rng.integers(s)) for s in arr.shape)
        old = arr[k]
        vals = []
        for step in (h, -h, 10 * h, -10 * h):
            arr[k] = old + step
            vals.append(reference_loss(params, X, gold_a, gold_t, n_family, config, kb))
        arr[k] = old
        fd = (vals[0] - vals[1]) / (2 * h)
        fd_wide = (vals[2] - vals[3]) / (20 * h)
        # a kink between the probes shows up as disagreeing slopes
        if abs(fd - fd_wide) > 1e-4 * max(1.0, abs(fd)):
            continue
        a = float(grads[name][k])
        err = ad.rel_error(a, fd)
        reports.append(ad.GradientReport({f"{name}{list(k)}": a}, {f"{name}{list(k)}": fd}, err, tol,
                                         err <= tol, math.inf, False))
    return reports


# ------------------------------------------------------------------- training


@dataclass
class TrainResult:
    params: ModelParams
    curves: list[dict] = field(default_factory=list)


def _arrays(records: Sequence[QuestionRecord], answers: Sequence[str], tasks: Sequence[str]):
    a_idx = {a: i for i, a in enumerate(answers)}
    t_idx = {t: i for i, t in enumerate(tasks)}
    X = np.array([r.features for r in records], dtype=float)
    ga = np.array([a_idx.get(r.gold_answer, -1) for r in records], dtype=int)
    gt = np.array([t_idx[r.task] for r in records], dtype=int)
    return X, ga, gt


def _epoch_batches(config: TrainConfig, records, families, row_of, rng, epoch: int):
    """(row indices, family prefix length) for every batch of one epoch."""
    if config.mode == "original":
        order = rng.permutation(len(records))
        bs = config.batch_size
        return [(order[s:s + bs], 0) for s in range(0, len(order), bs)]
    order = rng.permutation(len(families))
    batches = build_hybrid_batches([families[i] for i in order], records, config.batch_size,
                                   seed=int(rng.integers(2**63 - 1)))
    return [(np.array([row_of[m.id] for m in b.members], dtype=int), b.family_size) for b in batches]


def train(config: TrainConfig, records: Sequence[QuestionRecord], kb: EntailmentKB | None = None,
          answers: Sequence[str] | None = None,
          on_batch: Callable[[int, int, ModelParams, tuple], None] | None = None) -> TrainResult:
    """Plain SGD on the summed batch loss; one curve row per epoch.

    ``on_batch(epoch, batch_no, params, (X, gold_a, gold_t, n_family))`` is
    called before each update, e.g. for gradient audits.
    """
    validate_records(records, require_features=True)
    if config.mode == "logic" and kb is None:
        kb = builtin_kb()
    task_names = kb.task_names if kb is not None else builtin_kb().task_names
    validate_records(records, vocabulary=task_names)
    answers = tuple(answers) if answers is not None else tuple(sorted({r.gold_answer for r in records}))
    X, ga, gt = _arrays(records, answers, task_names)
    if (ga < 0).any():
        raise ValueError("training answers missing from the answer vocabulary")
    params = init_params(X.shape[1], answers, task_names, config.hidden, config.task_hidden, config.seed)
    engine = LossEngine(config, kb)
    rng = np.random.default_rng([config.seed, 1])
    families = group_families(records) if config.mode != "original" else []
    row_of = {r.id: i for i, r in enumerate(records)}
    curves = []
    for epoch in range(1, config.epochs + 1):
        sums = np.zeros(5)  # answer, task, logic, answer hits, task hits
        seen = 0
        batches = _epoch_batches(config, records, families, row_of, rng, epoch)
        for b, (rows, n_family) in enumerate(batches):
            Xb, ab, tb = X[rows], ga[rows], gt[rows]
            if on_batch is not None:
                on_batch(epoch, b, params, (Xb, ab, tb, n_family))
            fwd = forward(params, Xb)
            loss = engine(fwd, ab, tb, n_family)
            if not math.isfinite(loss.total):
                raise NonFiniteLoss(epoch, b, loss.total)
            sums += (loss.answer, loss.task, loss.logic,
                     np.sum(fwd.answer_probs.argmax(1) == ab), np.sum(fwd.task_probs.argmax(1) == tb))
            seen += len(rows)
            if config.lr != 0.0:
                grads = backward(params, Xb, fwd, loss.d_pa, loss.d_pt)
                for name, gr in grads.items():
                    getattr(params, name)[...] -= config.lr * gr
        n_b = max(1, len(batches))
        curves.append({"epoch": epoch, "answer_loss": sums[0] / max(seen, 1), "task_loss": sums[1] / max(seen, 1),
                       "logic_loss": sums[2] / n_b, "answer_acc": sums[3] / max(seen, 1),
                       "task_acc": sums[4] / max(seen, 1)})
    return TrainResult(params, curves)


def write_curves(curves: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=CURVE_COLUMNS)
        w.writeheader()
        for row in curves:
            w.writerow({k: (row[k] if k == "epoch" else f"{row[k]:.6f}") for k in CURVE_COLUMNS})


def predict(params: ModelParams, records: Sequence[QuestionRecord], with_probs: bool = False) -> list[dict]:
    """Argmax answer and task per record."""
    if not records:
        return []
    missing = [r.id for r in records if r.features is None]
    if missing:
        raise ShapeMismatch(f"records without features: {missing[:5]}")
    fwd = forward(params, np.array([r.features for r in records], dtype=float))
    out = []
    for i, r in enumerate(records):
        row = {"id": r.id, "answer": params.answers[int(fwd.answer_probs[i].argmax())],
               "task": params.tasks[int(fwd.task_probs[i].argmax())]}
        if with_probs:
            row["answer_probs"] = fwd.answer_probs[i].round(6).tolist()
            row["task_probs"] = fwd.task_probs[i].round(6).tolist()
        out.append(row)
    return out


def save_checkpoint(params: ModelParams, path: str | Path, config: TrainConfig | None = None) -> None:
    blob = {"format": "logicloss-mlp", "version": CHECKPOINT_VERSION, "schema_hash": params.schema_hash(),
            "answers": list(params.answers), "tasks": list(params.tasks),
            "config": asdict(config) if config is not None else None,
            "params": {n: a.tolist() for n, a in params.arrays().items()}}
    Path(path).write_text(json.dumps(blob), encoding="utf-8")


def load_checkpoint(path: str | Path) -> ModelParams:
    blob = json.loads(Path(path).read_text(encoding="utf-8"))
    if blob.get("format") != "logicloss-mlp" or blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a version {CHECKPOINT_VERSION} checkpoint")
    arrays = {n: np.asarray(blob["params"][n], dtype=float) for n in PARAM_NAMES}
    params = ModelParams(**arrays, answers=tuple(blob["answers"]), tasks=tuple(blob["tasks"]))
    if params.schema_hash() != blob["schema_hash"]:
        raise ValueError(f"{path}: schema hash mismatch")
    return params
