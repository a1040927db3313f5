"""Experiment orchestration: the four training modes and metrics emission.

Modes: ``central`` (Adam on the exact mean gradient), ``central-dp``
(DP-Adam, trained up to the step before the privacy budget would be
exceeded), ``fed`` (federated averaging), ``fed-ldp`` (federated
averaging with per-client privatized local training and budget-driven
dropout).

Metrics go to a JSON-lines file: a header object, one record per epoch
(central) or per round (federated), and a closing summary with the final
and best test accuracy. Files contain no wall-clock fields, so reruns
with the same config and seed are byte-identical.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .accountant import MechanismParams, compose, max_steps, new_accountant, to_epsilon
from .config import ExperimentConfig, to_flat_dict
from .data import Dataset, SplitSpec, load_csv, normalize_apply, normalize_fit, split, synth_blobs
from .dp import AdamState
from .federated import ServerState, make_clients, partition_iid, run_round
from .training import STREAM_NOISE, STREAM_ORDER, stream, train_local

logger = logging.getLogger(__name__)


class BudgetError(RuntimeError):
    """The privacy budget does not admit even a single training step."""


@dataclass
class MetricRecord:
    """One evaluation point: an epoch for central runs, a round for federated."""

    step: int
    train_loss: float
    train_acc: float
    test_loss: float
    test_acc: float
    epsilon_spent: float | None = None
    wall_time_s: float = 0.0  # in-memory only; kept out of the file for reproducibility

    def to_json_dict(self) -> dict:
        out = {"type": "record", "step": self.step,
               "train_loss": self.train_loss, "train_acc": self.train_acc,
               "test_loss": self.test_loss, "test_acc": self.test_acc}
        if self.epsilon_spent is not None:
            out["epsilon_spent"] = self.epsilon_spent
        return out


@dataclass
class ExperimentResult:
    records: list[MetricRecord]
    final_test_acc: float
    best_test_acc: float
    steps: int
    model: nn.MlpModel
    history: list = field(default_factory=list)  # federated RoundReports

    @property
    def summary(self) -> dict:
        return {"type": "summary", "final_test_acc": self.final_test_acc,
                "best_test_acc": self.best_test_acc, "steps": self.steps}


def emit_metrics(records: list[MetricRecord], path: str | Path,
                 header: dict, summary: dict) -> None:
    """Write header, one JSON object per record, then the summary line."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"type": "header", **header}) + "\n")
        for record in records:
            fh.write(json.dumps(record.to_json_dict()) + "\n")
        fh.write(json.dumps(summary) + "\n")


def read_metrics(path: str | Path) -> list[dict]:
    """Parse a metrics file back into its line objects."""
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines()
            if line.strip()]


def _prepare_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset, Dataset]:
    if cfg.csv_path is not None:
        dataset = load_csv(cfg.csv_path)
    else:
        dataset = synth_blobs(cfg.synthetic, cfg.seed)
    train, val, test = split(dataset, SplitSpec(), cfg.seed)
    norm = normalize_fit(train)
    return (normalize_apply(norm, train), normalize_apply(norm, val),
            normalize_apply(norm, test))


def _model_config(cfg: ExperimentConfig, train: Dataset) -> nn.MlpConfig:
    classes = max(int(train.labels.max()) + 1, 2)
    return nn.MlpConfig(input_dim=train.n_features, hidden_dims=cfg.model.hidden_dims,
                        output_dim=classes, activation=cfg.model.activation)


def _eval_record(model: nn.MlpModel, step: int, train: Dataset, test: Dataset,
                 train_loss: float, epsilon: float | None, t0: float) -> MetricRecord:
    test_logits, _ = nn.forward(model, test.features)
    test_loss, _ = nn.cross_entropy(test_logits, test.labels)
    return MetricRecord(
        step=step,
        train_loss=train_loss,
        train_acc=nn.evaluate(model, train.features, train.labels),
        test_loss=test_loss,
        test_acc=nn.evaluate(model, test.features, test.labels),
        epsilon_spent=epsilon,
        wall_time_s=time.perf_counter() - t0,
    )


def _run_central(cfg: ExperimentConfig, train: Dataset, test: Dataset) -> ExperimentResult:
    t0 = time.perf_counter()
    model = nn.init_model(_model_config(cfg, train), cfg.seed)
    order_rng = stream(cfg.seed, STREAM_ORDER)
    noise_rng = stream(cfg.seed, STREAM_NOISE)
    adam = AdamState.zeros(model.config.n_params)

    private = cfg.mode == "central-dp"
    allowance = None
    params = None
    if private:
        q = min(1.0, cfg.train.lot_size / len(train))
        params = MechanismParams(q, cfg.dp.noise_multiplier)
        allowance = max_steps(params, cfg.budget)
        if allowance == 0:
            raise BudgetError(
                f"budget (eps={cfg.budget.epsilon}, delta={cfg.budget.delta}) is "
                f"exceeded by the very first step at sigma={cfg.dp.noise_multiplier}, q={q:.4g}")
        logger.info("budget admits %d steps at q=%.4g sigma=%g",
                    allowance, q, cfg.dp.noise_multiplier)

    optimizer = f"dp-{cfg.train.optimizer}" if private else cfg.train.optimizer
    records: list[MetricRecord] = []
    steps_done = 0
    for epoch in range(cfg.train.epochs):
        remaining = None if allowance is None else allowance - steps_done
        stats = train_local(
            model, train.features, train.labels,
            batch_size=cfg.train.lot_size, epochs=1,
            eta=cfg.train.learning_rate,
            optimizer=optimizer,
            dp_spec=cfg.dp if private else None,
            sampling=cfg.sampling,
            order_rng=order_rng, noise_rng=noise_rng, adam=adam,
            max_steps=remaining, noise_seed=cfg.seed,
        )
        steps_done += stats.steps
        epsilon = None
        if private:
            state = compose(new_accountant(params), steps_done)
            epsilon = to_epsilon(state, cfg.budget.delta)[0]
        records.append(_eval_record(model, epoch, train, test,
                                    stats.mean_loss, epsilon, t0))
        if stats.budget_exhausted or (remaining is not None and stats.steps >= remaining):
            logger.info("privacy budget exhausted after %d steps (epoch %d)",
                        steps_done, epoch)
            break

    accs = [r.test_acc for r in records]
    return ExperimentResult(records=records,
                            final_test_acc=accs[-1] if accs else math.nan,
                            best_test_acc=max(accs) if accs else math.nan,
                            steps=steps_done, model=model)


def _run_federated(cfg: ExperimentConfig, train: Dataset, test: Dataset,
                   parallel: bool) -> ExperimentResult:
    t0 = time.perf_counter()
    fed = cfg.fed
    shards = partition_iid(train, fed.num_clients, cfg.seed)
    clients = make_clients(shards, fed)
    if not any(c.active for c in clients):
        raise BudgetError("every client's budget is exceeded by its first step")
    server = ServerState(global_model=nn.init_model(_model_config(cfg, train), cfg.seed))

    records: list[MetricRecord] = []
    for round_index in range(fed.rounds):
        report = run_round(server, clients, fed, cfg.seed,
                           eval_data=(test.features, test.labels), parallel=parallel)
        losses = [v for v in report.train_loss.values() if not math.isnan(v)]
        epsilon = None
        if fed.ldp is not None:
            epsilon = max((c.epsilon_spent(fed.ldp.budget.delta) for c in clients),
                          default=0.0)
        records.append(_eval_record(server.global_model, round_index, train, test,
                                    float(np.mean(losses)) if losses else math.nan,
                                    epsilon, t0))

    accs = [r.test_acc for r in records]
    return ExperimentResult(records=records,
                            final_test_acc=accs[-1] if accs else math.nan,
                            best_test_acc=max(accs) if accs else math.nan,
                            steps=len(records), model=server.global_model,
                            history=server.history)


def run_experiment(cfg: ExperimentConfig, out_path: str | Path | None = None,
                   parallel_clients: bool = False) -> ExperimentResult:
    """Execute the configured mode; optionally write the metrics file."""
    train, _val, test = _prepare_data(cfg)
    if cfg.mode in ("central", "central-dp"):
        result = _run_central(cfg, train, test)
    else:
        result = _run_federated(cfg, train, test, parallel_clients)

    if out_path is not None:
        cadence = "epoch" if cfg.mode.startswith("central") else "round"
        header = {"mode": cfg.mode, "seed": cfg.seed, "cadence": cadence,
                  "config": to_flat_dict(cfg)}
        emit_metrics(result.records, out_path, header, result.summary)
    return result
