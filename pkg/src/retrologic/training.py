"""Maximum-likelihood training: loss, exact and sampled gradients, optimizer loop."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import embedding as emb
from .chem import MolGraph
from .embedding import GraphBatch
from .model import (
    EMBEDDERS,
    ENERGIES,
    Caches,
    EmptySupportError,
    GlnModel,
    SupportR,
    SupportT,
    restrict_by_class,
    softmax,
)
from .templates import ReactionRecord

log = logging.getLogger(__name__)

ESTIMATORS = ("exact", "sampled-model", "sampled-uniform")
OPTIMIZERS = ("adam", "sgd")


class NumericAbort(RuntimeError):
    def __init__(self, update: int, what: str):
        super().__init__(f"non-finite {what} at update {update}")
        self.update = update


class SupportMissError(ValueError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 64
    max_updates: int = 150_000
    max_epochs: Optional[int] = None
    learning_rate: float = 1e-3
    grad_clip: float = 5.0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    estimator: str = "exact"
    seed: int = 0
    class_conditional: bool = False
    eval_every: int = 1  # epochs
    eval_beam: int = 10
    record_wall_time: bool = True

    def __post_init__(self):
        if self.batch_size <= 0 or self.max_updates <= 0 or self.grad_clip <= 0:
            raise ValueError("batch_size, max_updates and grad_clip must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.max_epochs is not None and self.max_epochs <= 0:
            raise ValueError("max_epochs must be positive")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")


@dataclass
class TrainItem:
    """One (O, T, R) example located inside its cached supports."""

    record_id: str
    product: MolGraph
    support_t: SupportT
    center: int  # group index of the true template's center
    template: int  # index of the true template inside its group
    support_r: SupportR
    reactants: int  # index of the true reactant set
    truth_key: tuple[bytes, ...]
    reaction_class: Optional[int] = None


def make_item(record: ReactionRecord, caches: Caches, class_conditional: bool = False,
              template=None) -> TrainItem:
    """Locate ``record``'s ground truth in its supports.

    ``template`` is the record's own template; without it, the first template
    in support order whose candidates contain the true reactants is used.
    Raises SupportMissError when the truth is not in the caches.
    """
    O = record.product
    st = caches.support_t(O)
    if class_conditional and record.reaction_class is not None:
        try:
            st = restrict_by_class(st, record.reaction_class)
        except EmptySupportError as exc:
            raise SupportMissError(str(exc)) from exc
    truth = record.truth_key
    choices = st.templates if template is None else [template]
    for t in choices:
        where = st.locate(t.template_key)
        if where is None:
            continue
        sr = caches.support_r(O, t)
        ri = sr.index(truth)
        if ri is not None:
            return TrainItem(record.record_id, O, st, where[0], where[1], sr, ri, truth, record.reaction_class)
    raise SupportMissError(f"{record.record_id}: ground truth not found in cached supports")


def prepare_items(records: Sequence[ReactionRecord], caches: Caches, class_conditional: bool = False,
                  templates: Optional[Sequence] = None) -> tuple[list[TrainItem], list[str]]:
    """Items for every record whose truth is in its supports, and the ids of the rest."""
    items, missed = [], []
    for i, rec in enumerate(records):
        try:
            items.append(make_item(rec, caches, class_conditional, None if templates is None else templates[i]))
        except SupportMissError:
            missed.append(rec.record_id)
    if missed:
        log.info("%d records excluded from training: truth absent from supports", len(missed))
    return items, missed


# ---------------------------------------------------------------------------
# batched forward/backward over many energies
# ---------------------------------------------------------------------------


class Tape:
    """Collects graphs per embedder, embeds each group in one pass, and backpropagates
    score coefficients to parameter gradients."""

    def __init__(self, model: GlnModel):
        self.model = model
        self.graphs: dict[str, list] = {n: [] for n in EMBEDDERS}
        self._slot: dict[str, dict[int, int]] = {n: {} for n in EMBEDDERS}
        self.fwd: dict[str, emb.BatchForward] = {}
        self.E: dict[str, np.ndarray] = {}
        self.U: dict[str, np.ndarray] = {}
        self.GA: dict[str, np.ndarray] = {}

    def add(self, name: str, g) -> int:
        slots = self._slot[name]
        key = id(g)
        if key not in slots:
            slots[key] = len(self.graphs[name])
            self.graphs[name].append(g)
        return slots[key]

    def add_set(self, name: str, graphs) -> list[int]:
        return [self.add(name, g) for g in graphs]

    def run(self) -> None:
        for name, gs in self.graphs.items():
            if gs:
                f = emb.forward(self.model.embedders[name], GraphBatch(gs))
                self.fwd[name] = f
                self.E[name] = f.graph_emb
                self.U[name] = np.zeros_like(f.graph_emb)

    def scores(self, energy: str, sets: Sequence[Sequence[int]], prod: int) -> np.ndarray:
        left, right = ENERGIES[energy]
        x = np.stack([self.E[left][list(s)].mean(axis=0) for s in sets])
        y = self.E[right][prod]
        if self.model.config.compatibility == "bilinear":
            return x @ (self.model.bilinear[energy] @ y)
        return x @ y

    def accumulate(self, energy: str, sets: Sequence[Sequence[int]], prod: int, coef: np.ndarray) -> None:
        """Add d(sum_k coef_k * score_k) to the embedding upstreams."""
        left, right = ENERGIES[energy]
        y = self.E[right][prod]
        bil = self.model.config.compatibility == "bilinear"
        A = self.model.bilinear.get(energy)
        ay = A @ y if bil else y
        for s, c in zip(sets, coef):
            if c == 0.0:
                continue
            s = list(s)
            xbar = self.E[left][s].mean(axis=0)
            np.add.at(self.U[left], s, (c / len(s)) * ay)
            self.U[right][prod] += c * (A.T @ xbar if bil else xbar)
            if bil:
                ga = self.GA.setdefault(energy, np.zeros_like(A))
                ga += c * np.outer(xbar, y)

    def backward(self) -> dict[str, np.ndarray]:
        grads = {k: np.zeros_like(v) for k, v in self.model.parameters().items()}
        for name, f in self.fwd.items():
            up = self.U[name]
            if not up.any():
                continue
            g = emb.backward(self.model.embedders[name], f, upstream_graph=up)
            for k, v in g.items():
                grads[f"{name}.{k}"] += v
        for k, v in self.GA.items():
            grads[f"A.{k}"] += v
        return grads


@dataclass
class _Plan:
    item: TrainItem
    prod: dict[str, int]
    centers: list[list[int]]
    centers_at: list[int]  # group indices present in ``centers``
    templates: list[list[int]]
    templates_at: list[int]
    cands: list[list[int]]
    cands_at: list[int]


def _plan(tape: Tape, it: TrainItem, centers=None, templates=None, cands=None) -> _Plan:
    """Register the graphs for an item; index lists default to the full supports."""
    centers = range(len(it.support_t.groups)) if centers is None else centers
    group = it.support_t.groups[it.center].templates
    templates = range(len(group)) if templates is None else templates
    cands = range(len(it.support_r)) if cands is None else cands
    prod = {n: tape.add(n, it.product) for n in ("g2", "g3", "g5")}
    return _Plan(
        it,
        prod,
        [[tape.add("g1", it.support_t.groups[k].center)] for k in centers], list(centers),
        [tape.add_set("g4", group[k].reactant_patterns) for k in templates], list(templates),
        [tape.add_set("g6", it.support_r.candidates[k]) for k in cands], list(cands),
    )


def _level_scores(tape: Tape, p: _Plan):
    return (tape.scores("v1", p.centers, p.prod["g2"]),
            tape.scores("v2", p.templates, p.prod["g3"]),
            tape.scores("w2", p.cands, p.prod["g5"]))


def _apply_coefs(tape: Tape, p: _Plan, cc, ct, cr) -> None:
    tape.accumulate("v1", p.centers, p.prod["g2"], cc)
    tape.accumulate("v2", p.templates, p.prod["g3"], ct)
    tape.accumulate("w2", p.cands, p.prod["g5"], cr)


def _nll_terms(s: np.ndarray, k: int) -> tuple[float, np.ndarray]:
    m = s.max()
    lse = m + math.log(np.exp(s - m).sum())
    return lse - s[k], softmax(s)


def loss_and_grad(model: GlnModel, batch: Sequence[TrainItem], with_grad: bool = True):
    """Mean negative log-likelihood of ``batch`` and, optionally, its exact gradient."""
    if not batch:
        raise ValueError("empty batch")
    tape = Tape(model)
    plans = [_plan(tape, it) for it in batch]
    tape.run()
    total = 0.0
    B = len(batch)
    for p in plans:
        it = p.item
        sc, stm, sr = _level_scores(tape, p)
        lc, pc = _nll_terms(sc, it.center)
        lt, pt = _nll_terms(stm, it.template)
        lr, pr = _nll_terms(sr, it.reactants)
        total += lc + lt + lr
        if with_grad:
            pc[it.center] -= 1.0
            pt[it.template] -= 1.0
            pr[it.reactants] -= 1.0
            _apply_coefs(tape, p, pc / B, pt / B, pr / B)
    loss = total / B
    return loss, (tape.backward() if with_grad else None)


def nll_loss(model: GlnModel, batch: Sequence[TrainItem]) -> float:
    return loss_and_grad(model, batch, with_grad=False)[0]


def grad_exact(model: GlnModel, batch: Sequence[TrainItem]) -> dict[str, np.ndarray]:
    return loss_and_grad(model, batch)[1]


def _draw(p: np.ndarray, u: float) -> int:
    return min(int(np.searchsorted(np.cumsum(p), u, side="right")), len(p) - 1)


def item_distributions(model: GlnModel, it: TrainItem) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """p(o|O), p(T|o*,O) and p(R|T*,O) for an item (o*, T* the true center and template)."""
    tape = Tape(model)
    p = _plan(tape, it)
    tape.run()
    return tuple(softmax(s) for s in _level_scores(tape, p))


def grad_sampled(model: GlnModel, it: TrainItem, proposal: str, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """One-sample estimate of the item's NLL gradient.

    Each normalizer's expectation is replaced by a single draw: a center from
    p(o|O), a template from p(T|o*,O) and a reactant set from p(R|T*,O). With
    ``proposal="uniform"`` the draws are uniform over the same supports and only
    the graphs involved are embedded; that variant is biased.
    """
    u = rng.random(3)
    nc, nt, nr = len(it.support_t.groups), len(it.support_t.groups[it.center].templates), len(it.support_r)
    if proposal == "model":
        pc, pt, pr = item_distributions(model, it)
        a, b, c = _draw(pc, u[0]), _draw(pt, u[1]), _draw(pr, u[2])
    elif proposal == "uniform":
        a, b, c = (min(int(x * n), n - 1) for x, n in zip(u, (nc, nt, nr)))
    else:
        raise ValueError("proposal must be 'model' or 'uniform'")
    tape = Tape(model)
    centers = sorted({a, it.center})
    temps = sorted({b, it.template})
    cands = sorted({c, it.reactants})
    p = _plan(tape, it, centers, temps, cands)
    tape.run()

    def coef(idx, drawn, true):
        out = np.zeros(len(idx))
        out[idx.index(drawn)] += 1.0
        out[idx.index(true)] -= 1.0
        return out

    _apply_coefs(tape, p, coef(centers, a, it.center), coef(temps, b, it.template), coef(cands, c, it.reactants))
    return tape.backward()


def outcome_gradients(model: GlnModel, it: TrainItem):
    """Score gradients for every outcome at each level, as flat vectors.

    A model-proposal draw (a, b, c) yields exactly
    ``Gc[a] - Gc[o*] + Gt[b] - Gt[T*] + Gr[c] - Gr[R*]``, which lets many
    draws be averaged without re-running the network.
    """
    tape = Tape(model)
    p = _plan(tape, it)
    tape.run()
    out = []
    for energy, sets, prod in (("v1", p.centers, p.prod["g2"]), ("v2", p.templates, p.prod["g3"]),
                               ("w2", p.cands, p.prod["g5"])):
        rows = []
        for k in range(len(sets)):
            for name in tape.U:
                tape.U[name][:] = 0.0
            tape.GA.clear()
            coef = np.zeros(len(sets))
            coef[k] = 1.0
            tape.accumulate(energy, sets, prod, coef)
            rows.append(flatten(tape.backward()))
        out.append(np.array(rows))
    return tuple(out)


def draw_many(dists, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` draws of (center, template, reactants); same stream as repeated grad_sampled calls."""
    u = rng.random((n, 3))
    cols = []
    for k, p in enumerate(dists):
        cols.append(np.minimum(np.searchsorted(np.cumsum(p), u[:, k], side="right"), len(p) - 1))
    return np.stack(cols, axis=1)


# ---------------------------------------------------------------------------
# parameter vectors and optimizers
# ---------------------------------------------------------------------------


def flatten(grads: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([grads[k].ravel() for k in grads])


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float((g * g).sum()) for g in grads.values()))


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params, self.lr, self.b1, self.b2, self.eps = params, lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            p -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


class SGD:
    def __init__(self, params: dict[str, np.ndarray], lr: float):
        self.params, self.lr = params, lr

    def step(self, grads: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            p -= self.lr * grads[k]


# ---------------------------------------------------------------------------
# loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: GlnModel  # best-validation parameters (or final, without validation)
    final: GlnModel
    metrics: list[dict] = field(default_factory=list)
    updates: int = 0
    epochs: int = 0


def batch_gradient(model: GlnModel, batch: Sequence[TrainItem], config: TrainConfig,
                   rng: np.random.Generator) -> tuple[float, dict[str, np.ndarray]]:
    if config.estimator == "exact":
        return loss_and_grad(model, batch)
    loss = nll_loss(model, batch)
    proposal = "model" if config.estimator == "sampled-model" else "uniform"
    grads = None
    for it in batch:
        g = grad_sampled(model, it, proposal, rng)
        if grads is None:
            grads = g
        else:
            for k in grads:
                grads[k] += g[k]
    for k in grads:
        grads[k] /= len(batch)
    return loss, grads


def train(model: GlnModel, items: Sequence[TrainItem], config: TrainConfig,
          val_items: Sequence[TrainItem] = (),
          accuracy_fn: Optional[Callable[[GlnModel, Sequence[TrainItem]], float]] = None,
          log_path=None, checkpoint_path=None) -> TrainResult:
    """Minibatch training with global-norm clipping.

    ``accuracy_fn(model, items)`` (e.g. beam-search top-1) is evaluated every
    ``config.eval_every`` epochs on the training and validation items. The
    best model by validation loss (training loss without validation) is kept.
    """
    if not items:
        raise ValueError("no training items")
    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    if config.optimizer == "adam":
        opt = Adam(params, config.learning_rate, config.beta1, config.beta2, config.eps)
    else:
        opt = SGD(params, config.learning_rate)
    log_fh = open(log_path, "a", encoding="utf-8") if log_path else None
    metrics: list[dict] = []
    best_score, best = math.inf, model.copy()
    start = time.perf_counter()
    update, epoch = 0, 0

    def emit(rec: dict) -> None:
        if config.record_wall_time:
            rec["wall"] = round(time.perf_counter() - start, 4)
        metrics.append(rec)
        if log_fh:
            log_fh.write(json.dumps(rec, sort_keys=True) + "\n")
            log_fh.flush()

    try:
        while update < config.max_updates and (config.max_epochs is None or epoch < config.max_epochs):
            order = rng.permutation(len(items))
            losses = []
            for s in range(0, len(order), config.batch_size):
                if update >= config.max_updates:
                    break
                batch = [items[i] for i in order[s:s + config.batch_size]]
                loss, grads = batch_gradient(model, batch, config, rng)
                if not math.isfinite(loss):
                    raise NumericAbort(update, "loss")
                norm = clip_by_global_norm(grads, config.grad_clip)
                if not math.isfinite(norm):
                    raise NumericAbort(update, "gradient")
                opt.step(grads)
                if not all(np.isfinite(p).all() for p in params.values()):
                    raise NumericAbort(update, "parameters")
                emit({"kind": "update", "update": update, "epoch": epoch, "loss": loss, "grad_norm": norm})
                losses.append(loss)
                update += 1
            epoch += 1
            if epoch % config.eval_every == 0 or update >= config.max_updates:
                rec = {"kind": "epoch", "epoch": epoch, "update": update, "train_loss": nll_loss(model, items)}
                if accuracy_fn is not None:
                    rec["train_top1"] = accuracy_fn(model, items)
                score = rec["train_loss"]
                if val_items:
                    rec["val_loss"] = nll_loss(model, val_items)
                    score = rec["val_loss"]
                    if accuracy_fn is not None:
                        rec["val_top1"] = accuracy_fn(model, val_items)
                if score < best_score:
                    best_score, best = score, model.copy()
                    if checkpoint_path:
                        best.save(checkpoint_path, {"epoch": epoch, "update": update})
                emit(rec)
    finally:
        if log_fh:
            log_fh.close()
    return TrainResult(best, model, metrics, update, epoch)


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
