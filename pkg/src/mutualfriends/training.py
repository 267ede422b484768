"""Training pipeline: transcripts -> perspective examples -> fitted model.

Each successful dialogue becomes two examples, one per KB side; the loss
is the per-token negative log-likelihood over every utterance in the
example, optimized by AdaGrad with per-example updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .dynonet import SELECT, DynoNet, ModelConfig, Token, Vocab
from .scenario import KB
from .schema import Schema
from .session import Transcript
from .util import make_rng


@dataclass
class Example:
    dialogue_id: str
    side: str
    kb: KB
    utterances: list[tuple[str, list[Token]]]  # (speaker, tokens)


@dataclass
class EpochStats:
    epoch: int
    train_ll: float
    dev_ll: float


@dataclass
class TrainResult:
    model: DynoNet
    history: list[EpochStats] = field(default_factory=list)
    best_dev: float = float("inf")


def utterance_tokens(event) -> list[Token]:
    """Rebuild the token stream of an utterance event from its links."""
    tokens: list[Token] = []
    for link in event.links:
        if link.get("entity"):
            tokens.append(("entity", link["entity"]))
        else:
            tokens.extend(("word", w) for w in link["span"].split())
    return tokens


def perspective_examples(transcripts: list[Transcript],
                         successful_only: bool = True) -> list[Example]:
    """Expand dialogues into per-side examples.

    Partner selection events are invisible to the other side and are
    dropped; own selections become a selection marker plus the item node.
    """
    out: list[Example] = []
    for t in transcripts:
        if successful_only and t.outcome != "success":
            continue
        for side in ("A", "B"):
            utterances: list[tuple[str, list[Token]]] = []
            for ev in t.events:
                speaker = "self" if ev.agent == side else "partner"
                if ev.kind == "utterance":
                    toks = utterance_tokens(ev)
                    if toks:
                        utterances.append((speaker, toks))
                elif ev.kind == "select" and speaker == "self":
                    utterances.append(
                        (speaker, [("word", SELECT), ("item", int(ev.item_index))])
                    )
            if utterances:
                out.append(Example(t.id, side, t.scenario.kb(side), utterances))
    return out


def build_vocab(examples: list[Example]) -> Vocab:
    words: list[str] = []
    seen = set()
    for ex in examples:
        for _, tokens in ex.utterances:
            for kind, value in tokens:
                if kind == "word" and value not in seen:
                    seen.add(value)
                    words.append(str(value))
    return Vocab(sorted(words))


def split_examples(examples: list[Example], seed: int = 0,
                   ratios: tuple[float, float] = (0.8, 0.1)) -> tuple[list[Example], list[Example], list[Example]]:
    """8:1:1 split by dialogue so both perspectives land in one bucket."""
    ids = sorted({ex.dialogue_id for ex in examples})
    rng = make_rng(seed)
    rng.shuffle(ids)
    n = len(ids)
    n_train = int(round(ratios[0] * n))
    n_dev = int(round(ratios[1] * n))
    train_ids = set(ids[:n_train])
    dev_ids = set(ids[n_train:n_train + n_dev])
    train = [ex for ex in examples if ex.dialogue_id in train_ids]
    dev = [ex for ex in examples if ex.dialogue_id in dev_ids]
    test = [ex for ex in examples if ex.dialogue_id not in train_ids and ex.dialogue_id not in dev_ids]
    return train, dev, test


def evaluate_ll(model: DynoNet, examples: list[Example]) -> float:
    """Mean per-token negative log-likelihood (nats)."""
    total_nll = 0.0
    total_tokens = 0
    for ex in examples:
        loss, count = model.example_loss(ex.kb, ex.utterances)
        total_nll += loss.item() * count
        total_tokens += count
    return total_nll / max(total_tokens, 1)


def train(transcripts: list[Transcript], schema: Schema, config: ModelConfig,
          min_epochs: int = 10, patience: int = 5, max_epochs: int = 50,
          split_seed: int = 0, stop_at_train_ll: float | None = None,
          dev_transcripts: list[Transcript] | None = None,
          batch_size: int = 1, dev_limit: int | None = None,
          restore_best: bool = True,
          log=None) -> TrainResult:
    """Fit the model. Stops early once min_epochs have run and the dev
    loss has not improved for `patience` epochs; the best-dev parameters
    are restored. stop_at_train_ll short-circuits (for capacity tests).
    batch_size > 1 accumulates gradients over several examples per
    optimizer step; dev_limit caps the per-epoch dev evaluation to a
    fixed subsample."""
    examples = perspective_examples(transcripts)
    if not examples:
        raise ValueError("no training examples (empty or unsuccessful corpus)")
    if dev_transcripts is not None:
        train_ex = examples
        dev_ex = perspective_examples(dev_transcripts)
        test_ex: list[Example] = []
    else:
        train_ex, dev_ex, test_ex = split_examples(examples, seed=split_seed)
        if not dev_ex:
            dev_ex = train_ex
    if dev_limit is not None and len(dev_ex) > dev_limit:
        dev_ex = dev_ex[:dev_limit]
    vocab = build_vocab(train_ex)
    model = DynoNet(schema, vocab, config)
    opt = ad.AdaGrad(model.params, lr=config.lr)
    rng = make_rng(config.seed)

    result = TrainResult(model=model)
    best_params: dict[str, np.ndarray] | None = None
    stale = 0
    for epoch in range(1, max_epochs + 1):
        order = rng.permutation(len(train_ex))
        nll_sum, token_sum = 0.0, 0
        pending = 0
        opt.zero_grad()
        for i in order:
            ex = train_ex[int(i)]
            with ad.Tape() as tape:
                loss, count = model.example_loss(ex.kb, ex.utterances)
            tape.backward(loss)
            pending += 1
            if pending >= batch_size:
                opt.step()
                opt.zero_grad()
                pending = 0
            nll_sum += loss.item() * count
            token_sum += count
        if pending:
            opt.step()
            opt.zero_grad()
        train_ll = nll_sum / max(token_sum, 1)
        dev_ll = evaluate_ll(model, dev_ex)
        result.history.append(EpochStats(epoch=epoch, train_ll=train_ll, dev_ll=dev_ll))
        if log:
            log(f"epoch {epoch}: train {train_ll:.4f} dev {dev_ll:.4f}")
        if dev_ll < result.best_dev - 1e-6:
            result.best_dev = dev_ll
            best_params = {k: v.data.copy() for k, v in model.params.items()}
            stale = 0
        else:
            stale += 1
        if stop_at_train_ll is not None and train_ll < stop_at_train_ll:
            break
        if epoch >= min_epochs and stale >= patience:
            break
    if restore_best and best_params is not None:
        for k, v in model.params.items():
            v.data = best_params[k]
    return result
