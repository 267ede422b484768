"""Graph-grounded encoder-decoder dialogue model.

The dialogue state is a knowledge graph whose node embeddings combine
structural features, recurrent per-node mention vectors, and depth-K
message passing. Utterances are encoded and generated by two LSTMs that
share one hidden chain; generation attends over node embeddings and can
copy any graph node. The static variant freezes the graph and mention
vectors at their initial state, so dialogue history lives only in the
LSTM chain.

Turn convention: the node embeddings used while decoding or encoding
utterance t reflect the graph and mentions after utterance t-1. A new
utterance is applied to the graph (new nodes, mention flags, mention
vectors) only after it has been encoded.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .kgraph import DialogueGraph, edge_labels, feature_dim, feature_matrix
from .scenario import KB
from .schema import Schema
from .util import make_rng

EOS = "</s>"
UNK = "<unk>"
SELECT = "<select>"


@dataclass
class ModelConfig:
    hidden: int = 100
    emb: int = 100
    k: int = 2
    entity_abstraction: bool = True
    dynamic_graph: bool = True  # False freezes graph + mention vectors at turn 0
    temperature: float = 0.5
    halve_selection: bool = True
    mention_gate: str = "scalar"  # "scalar" | "vector"
    relation_dim: int = 16
    max_decode_len: int = 20
    lr: float = 0.5
    seed: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


class Vocab:
    """Word inventory for the generator; entity tokens are graph nodes, not
    vocabulary words."""

    def __init__(self, words: list[str]):
        specials = [EOS, UNK, SELECT]
        seen = set(specials)
        self.words = list(specials)
        for w in words:
            if w not in seen:
                seen.add(w)
                self.words.append(w)
        self.index = {w: i for i, w in enumerate(self.words)}
        self.eos = self.index[EOS]
        self.unk = self.index[UNK]
        self.select = self.index[SELECT]

    def __len__(self) -> int:
        return len(self.words)

    def get(self, word: str) -> int:
        return self.index.get(word, self.unk)


# A token is ("word", str) | ("entity", entity_id) | ("item", item_index).
Token = tuple[str, str | int]


@dataclass
class DialogueState:
    graph: DialogueGraph
    mentions: Tensor  # (n_nodes, 2*hidden)
    enc_h: Tensor
    enc_c: Tensor
    embeddings: Tensor | None = None  # (n_nodes, node_dim) for the current turn
    attn_pre: Tensor | None = None
    features: Tensor | None = None
    dirty: bool = True
    frozen: bool = False  # static variant: never recompute embeddings


class DynoNet:
    def __init__(self, schema: Schema, vocab: Vocab, config: ModelConfig,
                 params: dict[str, Tensor] | None = None):
        self.schema = schema
        self.vocab = vocab
        self.config = config
        self.entity_types = list(schema.attribute_names) + ["item", "attribute"]
        self.type_index = {t: i for i, t in enumerate(self.entity_types)}
        self.labels = edge_labels(schema)
        self.label_index = {l: i for i, l in enumerate(self.labels)}
        self.entity_ids = [e.id for e in schema.entities()]
        self.entity_index = {e: i for i, e in enumerate(self.entity_ids)}
        self.feat_dim = feature_dim(schema)
        self.node_dim0 = self.feat_dim + 2 * config.hidden
        self.node_dim = self.node_dim0 + config.k * config.hidden
        self._zero_node = ad.zeros((1, self.node_dim))  # shared constant
        self.params = params if params is not None else self._init_params()

    # -- parameters ---------------------------------------------------------

    def _init_params(self) -> dict[str, Tensor]:
        cfg = self.config
        rng = make_rng(cfg.seed)
        h, emb, rd = cfg.hidden, cfg.emb, cfg.relation_dim
        p: dict[str, Tensor] = {
            "word_emb": ad.param((len(self.vocab), emb), rng),
            "type_emb": ad.param((len(self.entity_types), emb), rng),
            "rel_emb": ad.param((len(self.labels), rd), rng),
        }
        gate_out = 1 if cfg.mention_gate == "scalar" else 2 * h
        p["w_inc"] = ad.param((4 * h, gate_out), rng)
        prev_dim = self.node_dim0
        for k in range(1, cfg.k + 1):
            p[f"mp_w{k}"] = ad.param((prev_dim + rd, h), rng)
            prev_dim = h
        enc_in = emb + self.node_dim
        dec_in = emb + 2 * self.node_dim
        for name, dim in (("enc", enc_in), ("dec", dec_in)):
            lstm = ad.lstm_params(dim, h, rng)
            p[f"{name}_wx"], p[f"{name}_wh"], p[f"{name}_b"] = lstm["wx"], lstm["wh"], lstm["b"]
        p["attn_wh"] = ad.param((h, h), rng)
        p["attn_wv"] = ad.param((self.node_dim, h), rng)
        p["attn_v"] = ad.param((h, 1), rng)
        p["vocab_w"] = ad.param((h, len(self.vocab)), rng)
        p["vocab_b"] = ad.param((1, len(self.vocab)), rng)
        if not cfg.entity_abstraction:
            p["id_emb_in"] = ad.param((len(self.entity_ids), emb), rng)
            p["id_emb_node"] = ad.param((len(self.entity_ids), self.node_dim), rng)
        return p

    def _lstm(self, name: str) -> dict[str, Tensor]:
        return {"wx": self.params[f"{name}_wx"], "wh": self.params[f"{name}_wh"],
                "b": self.params[f"{name}_b"]}

    # -- dialogue state -------------------------------------------------------

    def new_dialogue(self, kb: KB) -> DialogueState:
        graph = DialogueGraph(kb, self.schema)
        h = self.config.hidden
        st = DialogueState(
            graph=graph,
            mentions=ad.zeros((graph.n_nodes, 2 * h)),
            enc_h=ad.zeros((1, h)),
            enc_c=ad.zeros((1, h)),
            frozen=not self.config.dynamic_graph,
        )
        self._refresh(st)
        return st

    def _edge_arrays(self, graph: DialogueGraph) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Edges grouped by source node, stable in insertion order. This is
        the canonical enumeration the embedding math is defined over.
        Cached per graph version (the graph only grows)."""
        key = (graph.n_nodes, len(graph.edges))
        cached = getattr(graph, "_edge_array_cache", None)
        if cached is not None and cached[0] == key:
            return cached[1]
        src = np.array([e[0] for e in graph.edges], dtype=np.intp)
        order = np.argsort(src, kind="stable")
        dst = np.array([e[2] for e in graph.edges], dtype=np.intp)[order]
        lbl = np.array([self.label_index[e[1]] for e in graph.edges], dtype=np.intp)[order]
        arrays = (src[order], dst, lbl)
        graph._edge_array_cache = (key, arrays)
        return arrays

    def _refresh(self, st: DialogueState) -> None:
        """Recompute per-turn node embeddings and the attention precompute."""
        cfg = self.config
        graph = st.graph
        st.features = ad.constant(feature_matrix(graph))
        level = ad.concat([st.features, st.mentions], axis=1)
        levels = [level]
        if cfg.k > 0:
            src, dst, lbl = self._edge_arrays(graph)
            for k in range(1, cfg.k + 1):
                inputs = ad.concat(
                    [ad.gather_rows(level, dst), ad.gather_rows(self.params["rel_emb"], lbl)],
                    axis=1,
                )
                messages = ad.tanh(ad.matmul(inputs, self.params[f"mp_w{k}"]))
                level = ad.segment_max(messages, src, graph.n_nodes)
                levels.append(level)
        embeddings = ad.concat(levels, axis=1) if len(levels) > 1 else levels[0]
        if not cfg.entity_abstraction:
            idx = np.zeros(graph.n_nodes, dtype=np.intp)
            mask = np.zeros((graph.n_nodes, 1))
            for v, node in enumerate(graph.nodes):
                if node.kind == "entity":
                    idx[v] = self.entity_index[node.ref]
                    mask[v, 0] = 1.0
            identity = ad.mul(ad.gather_rows(self.params["id_emb_node"], idx), ad.constant(mask))
            embeddings = ad.add_n([embeddings, identity])
        st.embeddings = embeddings
        st.attn_pre = ad.matmul(embeddings, self.params["attn_wv"])
        st.dirty = False

    def _ensure(self, st: DialogueState) -> None:
        if st.dirty and not st.frozen:
            self._refresh(st)

    # -- token representations -----------------------------------------------

    def _node_for_token(self, st: DialogueState, tok: Token) -> int | None:
        kind, value = tok
        if kind == "entity":
            return st.graph.node_id("entity", value)
        if kind == "item":
            return st.graph.node_id("item", int(value))
        return None

    def _input_parts(self, st: DialogueState, tok: Token) -> list[Tensor]:
        """The token's input representation as (head, node-context) parts."""
        kind, value = tok
        cfg = self.config
        if kind == "word":
            word = ad.gather_rows(self.params["word_emb"], [self.vocab.get(str(value))])
            return [word, self._zero_node]
        node = self._node_for_token(st, tok)
        if kind == "entity":
            type_name = self.schema.entity(str(value)).type
        else:
            type_name = "item"
        head = ad.gather_rows(self.params["type_emb"], [self.type_index[type_name]])
        if not cfg.entity_abstraction and kind == "entity":
            ident = ad.gather_rows(self.params["id_emb_in"], [self.entity_index[str(value)]])
            head = ad.add_n([head, ident])
        if node is None:
            # mentioned entity not (yet) in the graph: type embedding only
            return [head, self._zero_node]
        return [head, ad.gather_rows(st.embeddings, [node])]

    def _input_repr(self, st: DialogueState, tok: Token) -> Tensor:
        return ad.concat(self._input_parts(st, tok), axis=1)

    def _target_index(self, st: DialogueState, tok: Token) -> int:
        node = self._node_for_token(st, tok)
        if node is not None:
            return len(self.vocab) + node
        kind, value = tok
        if kind == "word":
            return self.vocab.get(str(value))
        return self.vocab.unk  # linked entity that has no node yet

    # -- attention + output ----------------------------------------------------

    def _attn_scores(self, st: DialogueState, h: Tensor) -> Tensor:
        """(1, n_nodes) unnormalized attention/copy scores."""
        return ad.attention_scores(h, st.attn_pre, self.params["attn_wh"],
                                   self.params["attn_v"])

    def _step_logits(self, st: DialogueState, h: Tensor, scores: Tensor) -> Tensor:
        words = ad.affine(h, self.params["vocab_w"], self.params["vocab_b"])
        return ad.concat([words, scores], axis=1)

    def _consume(self, st: DialogueState, tok: Token, h: Tensor, c: Tensor,
                 scores: Tensor) -> tuple[Tensor, Tensor]:
        ctx = ad.attention_context(scores, st.embeddings)
        x = ad.concat(self._input_parts(st, tok) + [ctx], axis=1)
        return ad.lstm_cell(x, h, c, self._lstm("dec"))

    # -- teacher-forced decoding ------------------------------------------------

    def decode_loss(self, st: DialogueState, tokens: list[Token]) -> tuple[Tensor, int]:
        """Negative log-likelihood of one utterance (plus end marker) given
        the current state. Does not advance the dialogue state."""
        self._ensure(st)
        h, c = st.enc_h, st.enc_c
        scores = self._attn_scores(st, h)
        h_rows, score_rows = [h], [scores]
        targets = [self._target_index(st, tokens[0]) if tokens else self.vocab.eos]
        for j, tok in enumerate(tokens):
            h, c = self._consume(st, tok, h, c, scores)
            nxt = self._target_index(st, tokens[j + 1]) if j + 1 < len(tokens) else self.vocab.eos
            h_rows.append(h)
            score_rows.append(scores)  # copy scores lag one step
            targets.append(nxt)
            if j + 1 < len(tokens):
                scores = self._attn_scores(st, h)
        hs = ad.concat(h_rows, axis=0) if len(h_rows) > 1 else h_rows[0]
        words = ad.affine(hs, self.params["vocab_w"], self.params["vocab_b"])
        copies = ad.concat(score_rows, axis=0) if len(score_rows) > 1 else score_rows[0]
        loss = ad.cross_entropy(ad.concat([words, copies], axis=1), targets)
        return loss, len(targets)

    # -- sampling -----------------------------------------------------------------

    def sample_utterance(self, st: DialogueState, rng: np.random.Generator,
                         temperature: float | None = None) -> list[Token]:
        """Sample one utterance (or a selection pair) token by token."""
        self._ensure(st)
        cfg = self.config
        tau = cfg.temperature if temperature is None else temperature
        h, c = st.enc_h, st.enc_c
        scores = self._attn_scores(st, h)
        probs = self._step_probs(st, h, scores, tau)
        out: list[Token] = []
        for _ in range(cfg.max_decode_len):
            if out and out[0] == ("word", SELECT):
                idx = self._sample_item_node(st, probs, rng)
            else:
                idx = int(rng.choice(len(probs), p=probs))
            tok = self._token_from_index(st, idx)
            if tok is None:  # end marker
                break
            if tok == ("word", SELECT) and out:
                break  # selection marker mid-utterance: truncate
            out.append(tok)
            if out[0] == ("word", SELECT) and len(out) == 2:
                break  # selection pair complete
            h, c = self._consume(st, tok, h, c, scores)
            probs = self._step_probs(st, h, scores, tau)  # copy scores lag, as in training
            scores = self._attn_scores(st, h)
        return out

    def _step_probs(self, st: DialogueState, h: Tensor, scores: Tensor,
                    tau: float) -> np.ndarray:
        logits = self._step_logits(st, h, scores).data[0]
        x = logits / tau
        x = x - x.max()
        p = np.exp(x)
        p /= p.sum()
        if self.config.halve_selection:
            p[self.vocab.select] *= 0.5
            p /= p.sum()
        return p

    def _sample_item_node(self, st: DialogueState, probs: np.ndarray,
                          rng: np.random.Generator) -> int:
        """After a selection marker, restrict sampling to item nodes."""
        offsets = [len(self.vocab) + v for v in st.graph.item_node_ids()]
        weights = probs[offsets]
        total = weights.sum()
        if total <= 0:
            weights = np.ones(len(offsets)) / len(offsets)
        else:
            weights = weights / total
        return int(offsets[int(rng.choice(len(offsets), p=weights))])

    def _token_from_index(self, st: DialogueState, idx: int) -> Token | None:
        if idx < len(self.vocab):
            if idx == self.vocab.eos:
                return None
            return ("word", self.vocab.words[idx])
        node = st.graph.nodes[idx - len(self.vocab)]
        if node.kind == "entity":
            return ("entity", node.ref)
        if node.kind == "item":
            return ("item", node.ref)
        return ("word", str(node.ref))  # attribute node realizes to its name

    # -- encoding + state update ---------------------------------------------------

    def encode_and_apply(self, st: DialogueState, tokens: list[Token], speaker: str,
                         links=None) -> None:
        """Run the encoder over an utterance, then fold it into the graph and
        mention vectors. speaker is "self" or "partner"."""
        if speaker not in ("self", "partner"):
            raise ValueError(f"bad speaker {speaker!r}")
        self._ensure(st)
        h, c = st.enc_h, st.enc_c
        enc = self._lstm("enc")
        for tok in tokens:
            x = self._input_repr(st, tok)
            h, c = ad.lstm_cell(x, h, c, enc)
        st.enc_h, st.enc_c = h, c
        if st.frozen:
            return

        graph = st.graph
        before = graph.n_nodes
        from .lexicon import LinkedToken  # local import to avoid a cycle at module load

        if links is None:
            links = []
            for kind, value in tokens:
                if kind == "entity":
                    links.append(LinkedToken(span=str(value), entity=self.schema.entity(str(value))))
        relevant = graph.apply_utterance(links, speaker)
        if graph.n_nodes > before:
            grown = ad.zeros((graph.n_nodes - before, 2 * self.config.hidden))
            st.mentions = ad.concat([st.mentions, grown], axis=0)

        if relevant.node_ids:
            ids = list(relevant.node_ids)
            u = st.enc_h
            zero = ad.zeros((1, self.config.hidden))
            tagged = ad.concat([u, zero] if speaker == "self" else [zero, u], axis=1)
            rows = ad.gather_rows(st.mentions, ids)
            tiled = ad.matmul(ad.constant(np.ones((len(ids), 1))), tagged)
            lam = ad.sigmoid(ad.matmul(ad.concat([rows, tiled], axis=1), self.params["w_inc"]))
            updated = ad.add_n([ad.mul(rows, lam), ad.mul(tiled, ad.affine_scalar(lam, -1.0, 1.0))])
            st.mentions = ad.scatter_rows(st.mentions, ids, updated)
        st.dirty = True

    # -- whole-example loss ------------------------------------------------------

    def example_loss(self, kb: KB, utterances: list[tuple[str, list[Token]]]) -> tuple[Tensor, int]:
        """Teacher-forced per-token loss over one dialogue perspective.

        utterances: (speaker, tokens) in timestamp order; loss covers every
        utterance, both the agent's own and the partner's.
        """
        st = self.new_dialogue(kb)
        terms = []
        count = 0
        for speaker, tokens in utterances:
            loss, n = self.decode_loss(st, tokens)
            terms.append(loss)
            count += n
            self.encode_and_apply(st, tokens, speaker)
        if not terms:
            raise ValueError("example has no utterances")
        total = terms[0]
        for term in terms[1:]:
            total = ad.add(total, term)
        return ad.affine_scalar(total, 1.0 / count), count

    # -- persistence ---------------------------------------------------------------

    def save(self, path: str) -> None:
        meta = {"config": self.config.to_dict(), "vocab": self.vocab.words}
        ad.save_checkpoint(path, self.params, meta)

    @classmethod
    def load(cls, path: str, schema: Schema) -> "DynoNet":
        params, meta = ad.load_checkpoint(path)
        config = ModelConfig.from_dict(meta["config"])
        vocab = Vocab([w for w in meta["vocab"]])
        return cls(schema, vocab, config, params=params)
