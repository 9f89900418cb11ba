"""Simulated synchronous data-parallel SGD with adaptive quantization.

Each step every worker draws a minibatch gradient, quantizes it with its
own keyed random stream, encodes and decodes it, and all workers apply the
average of the decoded gradients.  At scheduled steps the workers pool
sufficient statistics of their gradients (per-bucket mean, std and norm of
the normalized coordinates), fit a truncated-normal mixture, and adaptive
methods re-solve their levels; every method rebuilds its Huffman table
from the same statistics.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import codec
from .bounds import ScheduleLedger, schedule_average, variance_bound
from .config import ADAPTIVE, TrainConfig
from .distributions import (
    SIGMA_FLOOR,
    SIGNED_SUPPORT,
    UNSIGNED_SUPPORT,
    MixtureModel,
)
from .levels import (
    LevelSet,
    NormKind,
    exponential_levels,
    levels_for_bits,
    ternary_levels,
    uniform_levels,
)
from .optimizer import Objective, SolverConfig, alq_solve, amq_solve, gd_solve, psi
from .problems import Problem, make_problem
from .quantizer import BucketConfig, clip, dequantize, normalize_buckets, quantize, vector_variance
from .rng import PURPOSE_BATCH, PURPOSE_QUANTIZE, PURPOSE_STATS, stream

COLUMNS = (
    "kind", "step", "loss", "quant_var", "expected_var", "bits_per_coord",
    "psi_before", "psi_after", "epsilon_q", "code_bound_bits", "levels",
)


class DegenerateStatisticsError(ValueError):
    """All observed gradients are zero; nothing to fit."""


@dataclass(frozen=True)
class UpdateSchedule:
    warmup_steps: tuple = (100, 2000)
    period: int = 10000

    def __post_init__(self):
        w = tuple(int(t) for t in self.warmup_steps)
        if any(t < 0 for t in w) or list(w) != sorted(w):
            raise ValueError("warmup steps must be sorted and nonnegative")
        if self.period < 1:
            raise ValueError("period must be >= 1")
        object.__setattr__(self, "warmup_steps", w)

    def is_update(self, t: int) -> bool:
        return t in self.warmup_steps or (t > 0 and t % self.period == 0)


# --- statistics ------------------------------------------------------------

def bucket_statistics(grads, cfg: BucketConfig, symmetric: bool):
    """Per-bucket (mean, std, norm) of normalized coordinates, zero buckets
    dropped.  Raw tail coordinates are not part of any bucket."""
    means, stds, norms = [], [], []
    for g in grads:
        ratios, nb, _ = normalize_buckets(g, cfg)
        if not ratios.size:
            continue
        r = ratios if symmetric else np.abs(ratios)
        keep = nb > 0
        if not keep.any():
            continue
        r = r[keep]
        means.append(r.mean(axis=1))
        if r.shape[1] > 1:
            stds.append(r.std(axis=1, ddof=1))
        else:
            stds.append(np.zeros(r.shape[0]))
        norms.append(nb[keep])
    if not means:
        raise DegenerateStatisticsError("all gradients are zero")
    return np.concatenate(means), np.concatenate(stds), np.concatenate(norms)


def collect_statistics(grads, cfg: BucketConfig, sample_count: int = 20,
                       rng: np.random.Generator | None = None, symmetric: bool = False,
                       weighted: bool = True) -> MixtureModel:
    """Truncated-normal mixture over a uniform subsample of buckets.

    Component ``n`` is moment-matched to bucket ``n``; weights are
    ``||v_n||^2`` proportional when ``weighted``, uniform otherwise.
    """
    if len(grads) < 1:
        raise ValueError("need at least one gradient")
    mu, sd, nrm = bucket_statistics(grads, cfg, symmetric)
    if mu.size > sample_count:
        rng = rng if rng is not None else np.random.default_rng(0)
        pick = np.sort(rng.choice(mu.size, size=sample_count, replace=False))
        mu, sd, nrm = mu[pick], sd[pick], nrm[pick]
    lo, hi = SIGNED_SUPPORT if symmetric else UNSIGNED_SUPPORT
    weights = nrm ** 2 if weighted else None
    if weighted and not np.sum(weights) > 0:
        weights = None
    return MixtureModel.from_params(mu, np.maximum(sd, SIGMA_FLOOR), lo, hi, weights)


# --- update rules ----------------------------------------------------------

def momentum_update(w, g, alpha: float, mu: float, l: int, yl_prev):
    """Unified momentum step; returns ``(w_next, y^l)``.

    ``y = w - alpha g``, ``y^l = w - l alpha g`` and
    ``w_next = y + mu (y^l - y^l_prev)``.  l = 0 is heavy ball, l = 1
    Nesterov.  With ``mu = 0`` the result is exactly ``w - alpha g``.
    """
    y = w - alpha * g
    if mu == 0.0:
        return y, y if l else w
    yl = w - (l * alpha) * g
    return y + mu * (yl - yl_prev), yl


def aggregated_variance(grads, levels: LevelSet, cfg: BucketConfig, draws: int, seed: int = 0):
    """Monte-Carlo ``E ||mean_i Q(g_i) - mean_i g_i||^2 / d`` over ``draws``
    independent rounds; returns ``(mean, standard_error)``."""
    grads = [np.asarray(g, dtype=float) for g in grads]
    target = np.mean(grads, axis=0)
    vals = np.empty(draws)
    for k in range(draws):
        agg = np.zeros_like(target)
        for i, g in enumerate(grads):
            agg += dequantize(quantize(g, levels, cfg, stream(seed, PURPOSE_QUANTIZE, i, k)), levels)
        err = agg / len(grads) - target
        vals[k] = np.dot(err, err) / target.size
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(draws)) if draws > 1 else 0.0


# --- trainer ---------------------------------------------------------------

@dataclass
class TrainerState:
    w: list
    yl_prev: np.ndarray
    step: int
    levels: LevelSet | None
    table: codec.SymbolTable | None = None
    p: float | None = None
    ledger: ScheduleLedger = field(default_factory=ScheduleLedger)
    segment_start: int = 0
    segment_bounds: tuple = (0.0, 0.0, "")


@dataclass
class RunResult:
    rows: list
    ledger: ScheduleLedger
    final_w: np.ndarray
    level_history: list
    summary: dict

    def csv_text(self) -> str:
        return format_metrics(self.rows)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def format_metrics(rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(COLUMNS)
    for r in rows:
        wr.writerow([_fmt(r.get(c)) for c in COLUMNS])
    return buf.getvalue()


class Trainer:
    def __init__(self, cfg: TrainConfig, problem: Problem | None = None):
        self.cfg = cfg
        self.problem = problem if problem is not None else make_problem(
            cfg.problem, seed=cfg.seed, **cfg.problem_kwargs
        )
        self.method = cfg.method
        self.full = cfg.method == "full-precision"
        self.symmetric = cfg.is_symmetric and cfg.method != "ternary"
        self.bucket = BucketConfig(cfg.bucket_size, NormKind.parse(cfg.norm_text))
        self.schedule = UpdateSchedule(cfg.schedule, cfg.period)
        self.solver = SolverConfig(max_sweeps=cfg.max_sweeps, gd_steps=cfg.gd_steps,
                                   gd_rate=cfg.gd_rate, init_p=cfg.exp_p)
        self.weighted = cfg.method in ("alq", "amq", "alq-gd")
        self.s = 0 if cfg.method in ("ternary", "full-precision") else levels_for_bits(cfg.bits, self.symmetric)
        d = self.problem.dim
        n_b, width, tail = self.bucket.split(d)
        self.layout = (n_b, width, tail)
        w0 = self.problem.init_params()
        self.state = TrainerState(
            w=[w0.copy() for _ in range(cfg.workers)],
            yl_prev=w0.copy(),
            step=0,
            levels=None if self.full else self._initial_levels(),
            p=cfg.exp_p if cfg.method in ("amq", "amq-n") else None,
        )
        self.rows: list = []
        self.level_history: list = []
        self._acc = {"quant_var": 0.0, "expected_var": 0.0, "bits": 0.0, "n": 0}

    def _initial_levels(self) -> LevelSet:
        m = self.method
        if m == "ternary":
            return ternary_levels()
        if m in ("amq", "amq-n"):
            return exponential_levels(self.s, self.cfg.exp_p, self.symmetric)
        if m == "exponential":
            return exponential_levels(self.s, self.cfg.exp_p, self.symmetric)
        return uniform_levels(self.s, self.symmetric)

    # bounds are per transmitted vector
    def _segment_bounds(self, levels: LevelSet, model):
        n_b, width, tail = self.layout
        if self.full:
            return 0.0, 32.0 * self.problem.dim
        rep = variance_bound(levels, width, self.bucket.norm, model=model)
        return rep.epsilon_q, n_b * rep.code_length_bits + 64.0 * tail

    def _close_segment(self, t: int):
        st = self.state
        steps = t - st.segment_start
        if steps > 0:
            eps, bits, h = st.segment_bounds
            st.ledger.add(h, steps, eps, bits)
        st.segment_start = t

    def _adapt(self, t: int, grads):
        st = self.state
        cfg = self.cfg
        rng = stream(cfg.seed, PURPOSE_STATS, t)
        model = collect_statistics(grads, self.bucket, cfg.sample_count, rng,
                                   symmetric=self.symmetric, weighted=True)
        plain = MixtureModel(model.components)
        obj = Objective(model, weighted=self.weighted, symmetric=self.symmetric)
        before = psi(st.levels, obj)
        adaptive_now = self.method in ADAPTIVE and (t > 0 or self.schedule.is_update(t))
        if adaptive_now:
            if self.method in ("alq", "alq-n"):
                res = alq_solve(self.s, obj, self.solver, warm_start=st.levels)
            elif self.method == "alq-gd":
                res = gd_solve(self.s, obj, self.solver, start=st.levels)
            else:
                res = amq_solve(self.s, obj, self.solver, p0=st.p)
                st.p = res.p
            st.levels = res.levels
        after = psi(st.levels, obj)
        st.table = codec.build_huffman(codec.symbol_probs(st.levels, plain))
        self._close_segment(t)
        eps, bits = self._segment_bounds(st.levels, plain)
        st.segment_bounds = (eps, bits, f"{st.levels.digest():016x}")
        self.level_history.append((t, st.levels))
        self.rows.append({
            "kind": "adapt", "step": t, "psi_before": before, "psi_after": after,
            "epsilon_q": eps, "code_bound_bits": bits, "levels": st.levels.to_text(),
        })

    def _lr(self, t: int) -> float:
        k = sum(1 for s in self.cfg.lr_decay_steps if t >= s)
        return self.cfg.lr * self.cfg.lr_decay ** k

    def step(self, mu: float | None = None, l: int | None = None):
        st = self.state
        cfg = self.cfg
        t = st.step
        prob = self.problem
        d = prob.dim
        grads = []
        for i in range(cfg.workers):
            g = prob.gradient(st.w[i], stream(cfg.seed, PURPOSE_BATCH, i, t), step=t)
            if cfg.clip > 0:
                g = clip(g, cfg.clip)
            grads.append(g)
        if not self.full and (t == 0 or self.schedule.is_update(t)):
            try:
                self._adapt(t, grads)
            except DegenerateStatisticsError:
                if st.table is None:
                    st.table = codec.build_huffman(np.full(st.levels.num_symbols, 1.0))
                    st.segment_bounds = (*self._segment_bounds(st.levels, None), f"{st.levels.digest():016x}")
        elif self.full and t == 0:
            st.segment_bounds = (0.0, 32.0 * d, "full-precision")
        decoded = []
        qv = ev = bits = 0.0
        for i, g in enumerate(grads):
            if self.full:
                ghat = g
                bits += 32.0 * d
            else:
                qg = quantize(g, st.levels, self.bucket, stream(cfg.seed, PURPOSE_QUANTIZE, i, t))
                blob = codec.encode(qg, st.table, st.levels)
                back = codec.decode(blob, st.table, st.levels)
                ghat = dequantize(back, st.levels)
                bits += 8.0 * len(blob)
                ev += vector_variance(g, st.levels, self.bucket)
                err = ghat - g
                qv += float(np.dot(err, err))
            decoded.append(ghat)
        M = cfg.workers
        agg = np.mean(decoded, axis=0) if M > 1 else decoded[0]
        alpha = self._lr(t)
        mu = cfg.momentum if mu is None else float(mu)
        if l is None:
            l = 1 if cfg.nesterov else 0
        new_w = None
        for i in range(M):
            wi, yl = momentum_update(st.w[i], agg, alpha, mu, l, st.yl_prev)
            if new_w is not None and not np.array_equal(wi, new_w):
                raise AssertionError("worker replicas diverged")
            st.w[i] = wi
            new_w = wi
        st.yl_prev = yl
        st.step = t + 1
        row = {
            "kind": "step", "step": t, "loss": prob.loss(new_w),
            "quant_var": qv / (M * d), "expected_var": ev / (M * d), "bits_per_coord": bits / (M * d),
        }
        self._acc["quant_var"] += row["quant_var"]
        self._acc["expected_var"] += row["expected_var"]
        self._acc["bits"] += row["bits_per_coord"]
        self._acc["n"] += 1
        if t % cfg.log_every == 0 or t == cfg.steps - 1:
            self.rows.append(row)
        return row

    def run(self) -> RunResult:
        for _ in range(self.cfg.steps):
            self.step()
        st = self.state
        self._close_segment(st.step)
        eps_bar, bits_bar = schedule_average(st.ledger)
        n = max(self._acc["n"], 1)
        w = st.w[0]
        summary = {
            "kind": "summary", "step": st.step, "loss": self.problem.loss(w),
            "quant_var": self._acc["quant_var"] / n, "expected_var": self._acc["expected_var"] / n,
            "bits_per_coord": self._acc["bits"] / n, "epsilon_q": eps_bar,
            "code_bound_bits": bits_bar,
            "levels": st.levels.to_text() if st.levels is not None else "",
        }
        self.rows.append(summary)
        return RunResult(self.rows, st.ledger, w.copy(), self.level_history, summary)


def aqsgd_step(trainer: Trainer) -> dict:
    """Advance one synchronous step; returns the step's metrics."""
    return trainer.step()


def momentum_step(trainer: Trainer, mu: float, l: int) -> dict:
    """One step with unified momentum ``(mu, l)`` overriding the config."""
    if not 0 <= mu < 1 or l not in (0, 1):
        raise ValueError("need 0 <= mu < 1 and l in {0, 1}")
    return trainer.step(mu=mu, l=l)


def run(cfg: TrainConfig, problem: Problem | None = None) -> RunResult:
    return Trainer(cfg, problem).run()
