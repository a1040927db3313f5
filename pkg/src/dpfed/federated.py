"""Federated rounds: client sampling, local training, weighted averaging.

Each round the server selects a subset of active clients, every selected
client trains a copy of the global model on its own shard (optionally with
a proximal pull toward the downloaded model, optionally through the
privatized gradient pipeline), and the server replaces the global model
with the shard-size-weighted average of the returned parameters.

Clients under local privacy carry their own accountant. A client whose
budget is exhausted stops mid-round, returns what it has, and never
participates again.

Per-client generators are derived from (run seed, stream, round, client),
so running clients concurrently gives results identical to running them
one after another.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import dp, nn
from .accountant import (AccountantState, MechanismParams, PrivacyBudget,
                         compose, max_steps, new_accountant, to_epsilon)
from .data import Dataset
from .training import (STREAM_NOISE, STREAM_ORDER, STREAM_PARTITION,
                       STREAM_SELECT, stream, train_local)


@dataclass(frozen=True)
class LdpSpec:
    """Local privacy: the per-step mechanism plus each client's budget."""

    dp_spec: dp.DpSpec
    budget: PrivacyBudget

    def __post_init__(self):
        if not (self.dp_spec.noise_multiplier > 0):
            raise ValueError("local privacy requires a positive noise multiplier")


@dataclass(frozen=True)
class RoundConfig:
    """Federation hyperparameters."""

    num_clients: int
    client_fraction: float = 1.0
    local_batch: int = 64
    local_epochs: int = 1
    learning_rate: float = 0.01
    prox_mu: float = 0.0
    optimizer: str = "sgd"
    rounds: int = 1
    ldp: LdpSpec | None = None

    def __post_init__(self):
        if self.num_clients < 1:
            raise ValueError("num_clients must be >= 1")
        if not (0 < self.client_fraction <= 1):
            raise ValueError("client_fraction must lie in (0, 1]")
        if self.local_batch < 1 or self.local_epochs < 1:
            raise ValueError("local_batch and local_epochs must be >= 1")
        if not (self.learning_rate > 0):
            raise ValueError("learning_rate must be positive")
        if self.prox_mu < 0:
            raise ValueError("prox_mu must be non-negative")
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if self.optimizer not in ("sgd", "adam", "dp-sgd", "dp-adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.optimizer.startswith("dp-") != (self.ldp is not None):
            raise ValueError("dp optimizers require ldp config and vice versa")


@dataclass
class ClientState:
    """One simulated client: its shard, budget bookkeeping and liveness."""

    id: int
    shard: Dataset
    accountant: AccountantState | None = None
    step_allowance: int | None = None  # lifetime privatized steps within budget
    active: bool = True

    @property
    def n_samples(self) -> int:
        return len(self.shard)

    @property
    def steps_taken(self) -> int:
        return self.accountant.steps if self.accountant is not None else 0

    def epsilon_spent(self, delta: float) -> float:
        if self.accountant is None or self.accountant.steps == 0:
            return 0.0
        return to_epsilon(self.accountant, delta)[0]


@dataclass
class ClientRoundResult:
    client_id: int
    params: np.ndarray
    n_samples: int
    steps: int
    train_loss: float
    budget_exhausted: bool


@dataclass
class RoundReport:
    """What happened in one federated round."""

    round_index: int
    selected: tuple[int, ...]
    train_loss: dict[int, float]
    epsilon_spent: dict[int, float]
    test_accuracy: float
    dropped: tuple[int, ...]


@dataclass
class ServerState:
    global_model: nn.MlpModel
    round_index: int = 0
    history: list[RoundReport] = field(default_factory=list)


def partition_iid(dataset: Dataset, num_clients: int, seed: int) -> list[Dataset]:
    """Seeded uniform shuffle cut into near-equal disjoint shards.

    A single client receives the dataset as-is: the shuffle would only
    permute rows within the one shard, and keeping the order canonical
    lets the degenerate federation reproduce centralized training exactly.
    """
    n = len(dataset)
    if num_clients < 1:
        raise ValueError("num_clients must be >= 1")
    if num_clients > n:
        raise ValueError(f"cannot partition {n} samples among {num_clients} clients")
    if num_clients == 1:
        return [dataset.subset(np.arange(n), name=f"{dataset.name}/client0")]
    perm = stream(seed, STREAM_PARTITION).permutation(n)
    return [dataset.subset(chunk, name=f"{dataset.name}/client{k}")
            for k, chunk in enumerate(np.array_split(perm, num_clients))]


def select_clients(active_ids: list[int], fraction: float, total_clients: int,
                   rng: np.random.Generator) -> list[int]:
    """Uniform subset of size min(max(ceil(C * K), 1), #active), sorted by id."""
    if not active_ids:
        return []
    m = max(math.ceil(fraction * total_clients - 1e-9), 1)
    m = min(m, len(active_ids))
    chosen = rng.choice(np.asarray(active_ids), size=m, replace=False)
    return sorted(int(c) for c in chosen)


def make_clients(shards: list[Dataset], cfg: RoundConfig) -> list[ClientState]:
    """Client states for the given shards, with accountants when LDP is on."""
    clients = []
    for k, shard in enumerate(shards):
        accountant = None
        allowance = None
        if cfg.ldp is not None:
            q = min(1.0, cfg.local_batch / len(shard))
            params = MechanismParams(q, cfg.ldp.dp_spec.noise_multiplier)
            accountant = new_accountant(params)
            allowance = max_steps(params, cfg.ldp.budget)
        clients.append(ClientState(id=k, shard=shard, accountant=accountant,
                                   step_allowance=allowance, active=allowance != 0))
    return clients


def client_update(client: ClientState, global_model: nn.MlpModel,
                  cfg: RoundConfig, seed: int, round_index: int) -> ClientRoundResult:
    """Run one client's local epochs starting from the downloaded model.

    Under LDP the step count is capped by the client's remaining
    allowance; on exhaustion the client keeps its partial update (the
    noise for those steps is already paid for) and goes inactive.
    """
    if not client.active:
        raise RuntimeError(f"client {client.id} is inactive")
    if client.n_samples == 0:
        raise ValueError(f"client {client.id} has an empty shard")

    local = global_model.copy()
    order_rng = stream(seed, STREAM_ORDER, round_index, client.id)
    noise_rng = stream(seed, STREAM_NOISE, round_index, client.id)

    cap = None
    dp_spec = None
    if cfg.ldp is not None:
        dp_spec = cfg.ldp.dp_spec
        cap = client.step_allowance - client.steps_taken

    stats = train_local(
        local, client.shard.features, client.shard.labels,
        batch_size=cfg.local_batch, epochs=cfg.local_epochs,
        eta=cfg.learning_rate, optimizer=cfg.optimizer,
        dp_spec=dp_spec, prox_mu=cfg.prox_mu,
        prox_reference=global_model.params if cfg.prox_mu > 0 else None,
        order_rng=order_rng, noise_rng=noise_rng, max_steps=cap,
        noise_seed=seed,
    )

    exhausted = False
    if cfg.ldp is not None:
        client.accountant = compose(client.accountant, stats.steps)
        exhausted = client.steps_taken >= client.step_allowance
        if exhausted:
            client.active = False
    return ClientRoundResult(client_id=client.id, params=local.params,
                             n_samples=client.n_samples, steps=stats.steps,
                             train_loss=stats.mean_loss, budget_exhausted=exhausted)


def aggregate_fedavg(updates: list[tuple[np.ndarray, int]]) -> np.ndarray:
    """Shard-size-weighted average of parameter vectors, in the given order."""
    if not updates:
        raise ValueError("cannot aggregate an empty update list")
    length = updates[0][0].shape
    if any(p.shape != length for p, _ in updates):
        raise ValueError("parameter vectors have mismatched lengths")
    total = sum(n for _, n in updates)
    agg = np.zeros(length)
    for params, n in updates:
        agg += (n / total) * params
    return agg


def run_round(server: ServerState, clients: list[ClientState], cfg: RoundConfig,
              seed: int, eval_data: tuple[np.ndarray, np.ndarray] | None = None,
              parallel: bool = False) -> RoundReport:
    """Select, update in parallel, aggregate, evaluate; advances the server."""
    round_index = server.round_index
    active_ids = [c.id for c in clients if c.active]
    select_rng = stream(seed, STREAM_SELECT, round_index)
    selected = select_clients(active_ids, cfg.client_fraction, cfg.num_clients,
                              select_rng)
    by_id = {c.id: c for c in clients}

    results: list[ClientRoundResult] = []
    if selected:
        def update(cid: int) -> ClientRoundResult:
            try:
                return client_update(by_id[cid], server.global_model, cfg,
                                     seed, round_index)
            except Exception as exc:
                raise RuntimeError(f"client {cid} failed in round {round_index}") from exc

        if parallel:
            with ThreadPoolExecutor(max_workers=min(8, len(selected))) as pool:
                results = list(pool.map(update, selected))
        else:
            results = [update(cid) for cid in selected]
        results.sort(key=lambda r: r.client_id)
        reporting = [r for r in results if r.steps > 0]
        if reporting:
            agg = aggregate_fedavg([(r.params, r.n_samples) for r in reporting])
            server.global_model = nn.MlpModel(server.global_model.config, agg)

    test_acc = math.nan
    if eval_data is not None:
        test_acc = nn.evaluate(server.global_model, eval_data[0], eval_data[1])

    delta = cfg.ldp.budget.delta if cfg.ldp is not None else None
    report = RoundReport(
        round_index=round_index,
        selected=tuple(selected),
        train_loss={r.client_id: r.train_loss for r in results},
        epsilon_spent={r.client_id: by_id[r.client_id].epsilon_spent(delta)
                       for r in results} if delta is not None else {},
        test_accuracy=test_acc,
        dropped=tuple(r.client_id for r in results if r.budget_exhausted),
    )
    server.round_index += 1
    server.history.append(report)
    return report


def run_federation(model_config: nn.MlpConfig, cfg: RoundConfig,
                   train_data: Dataset, seed: int,
                   eval_data: tuple[np.ndarray, np.ndarray] | None = None,
                   parallel: bool = False) -> tuple[nn.MlpModel, list[RoundReport]]:
    """Partition the data, run the configured number of rounds, return history."""
    shards = partition_iid(train_data, cfg.num_clients, seed)
    clients = make_clients(shards, cfg)
    server = ServerState(global_model=nn.init_model(model_config, seed))
    for _ in range(cfg.rounds):
        run_round(server, clients, cfg, seed, eval_data=eval_data, parallel=parallel)
    return server.global_model, server.history
