"""The stepwise summarization network.

Three cooperating pieces share one embedding table and one transformer
encoder stack:

  * a selective-reading pass that polishes document states with a gated
    recurrence whose update gate is computed from each word's interaction
    with the previous-summary query and normalized across positions;
  * a decoder (masked self-attention stack) whose output attends over both
    the polished document and the previous summary through bilinear scores,
    feeding a vocabulary softmax;
  * a convolutional coherence head scoring whether a candidate summary fits
    the previous summary, trained adversarially against the generator.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .text import BOS, EOS


class EmptyInputError(ValueError):
    pass


class CheckpointMismatchError(ValueError):
    def __init__(self, name: str, expected, got):
        self.param_name = name
        super().__init__(f"checkpoint shape mismatch for '{name}': expected {expected}, got {got}")


@dataclass
class ModelConfig:
    d_model: int = 16
    n_heads: int = 2
    n_enc_layers: int = 1
    n_dec_layers: int = 1
    vocab_size: int = 100
    max_doc_len: int = 1000
    max_prev_summary_len: int = 300
    min_decode_len: int = 100
    max_decode_len: int = 300
    conv_widths: tuple[int, ...] = (3, 4, 5)
    n_filters_per_width: int = 8
    attention_score_mode: str = "relu"  # "relu" (unnormalized, as designed) or "softmax"
    gate_mode: str = "position_softmax"  # or "sigmoid" (plain gated-recurrence gate)

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        for name in ("d_model", "n_heads", "n_enc_layers", "n_dec_layers", "vocab_size",
                     "max_doc_len", "max_prev_summary_len", "max_decode_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.min_decode_len <= self.max_decode_len:
            raise ValueError("need 0 <= min_decode_len <= max_decode_len")
        if self.attention_score_mode not in ("relu", "softmax"):
            raise ValueError("attention_score_mode must be 'relu' or 'softmax'")
        if self.gate_mode not in ("position_softmax", "sigmoid"):
            raise ValueError("gate_mode must be 'position_softmax' or 'sigmoid'")


def tiny_config(**overrides) -> ModelConfig:
    """Desk-scale defaults: small decode window, small model."""
    base = dict(
        d_model=16, n_heads=2, n_enc_layers=1, n_dec_layers=1, vocab_size=100,
        max_doc_len=120, max_prev_summary_len=60, min_decode_len=1,
        max_decode_len=40, conv_widths=(2, 3), n_filters_per_width=4,
    )
    base.update(overrides)
    return ModelConfig(**base)


def _layer_shapes(prefix: str, d: int) -> dict[str, tuple[int, ...]]:
    shapes = {}
    for proj in ("wq", "wk", "wv", "wo"):
        shapes[f"{prefix}.attn.{proj}"] = (d, d)
    for bias in ("bq", "bk", "bv", "bo"):
        shapes[f"{prefix}.attn.{bias}"] = (d,)
    shapes[f"{prefix}.ln1.g"] = (d,)
    shapes[f"{prefix}.ln1.b"] = (d,)
    shapes[f"{prefix}.ffn.w1"] = (d, 4 * d)
    shapes[f"{prefix}.ffn.b1"] = (4 * d,)
    shapes[f"{prefix}.ffn.w2"] = (4 * d, d)
    shapes[f"{prefix}.ffn.b2"] = (d,)
    shapes[f"{prefix}.ln2.g"] = (d,)
    shapes[f"{prefix}.ln2.b"] = (d,)
    return shapes


def expected_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Every trainable tensor, derived from the config. Insertion order is
    the canonical parameter order for initialization and checkpoints."""
    d, v = config.d_model, config.vocab_size
    shapes: dict[str, tuple[int, ...]] = {"embed": (v, d)}
    for i in range(config.n_enc_layers):
        shapes.update(_layer_shapes(f"enc.{i}", d))
    for i in range(config.n_dec_layers):
        shapes.update(_layer_shapes(f"dec.{i}", d))
    # selective reading: standard gate (w1/u1), reset (w2/u2), candidate (w3/u3),
    # and the interaction gate of the position-normalized path (w5 then w4)
    for k in ("1", "2", "3"):
        shapes[f"sru.w{k}"] = (d, d)
        shapes[f"sru.u{k}"] = (d, d)
        shapes[f"sru.b{k}"] = (d,)
    shapes["sru.w5"] = (3 * d, d)
    shapes["sru.b5"] = (d,)
    shapes["sru.w4"] = (d, d)
    shapes["sru.b4"] = (d,)
    for name in ("wa", "wb", "wc", "wd"):
        shapes[f"xattn.{name}"] = (d, d)
    shapes["out.wo"] = (3 * d, v)
    shapes["disc.wz"] = (d, d)
    shapes["disc.bz"] = (d,)
    for w in config.conv_widths:
        shapes[f"disc.conv.w{w}"] = (w * 2 * d, config.n_filters_per_width)
        shapes[f"disc.conv.b{w}"] = (config.n_filters_per_width,)
    total_filters = len(config.conv_widths) * config.n_filters_per_width
    shapes["disc.wh"] = (total_filters, 1)
    shapes["disc.bh"] = (1,)
    return shapes


class Params:
    """Named parameter tensors, all requires_grad."""

    def __init__(self, tensors: dict[str, Tensor]):
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    def names(self) -> list[str]:
        return list(self.tensors)

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    @staticmethod
    def is_discriminator(name: str) -> bool:
        return name.startswith("disc.")

    def block_names(self, discriminator: bool) -> list[str]:
        return [n for n in self.tensors if self.is_discriminator(n) == discriminator]

    def copy_values(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.tensors.items()}


def init_params(config: ModelConfig, rng: np.random.Generator) -> Params:
    """Scaled-uniform init: limit 1/sqrt(fan_in) for matrices, zeros for
    biases, ones for norm gains. Draw order follows the canonical shape map
    so a given seed always produces the same model."""
    tensors: dict[str, Tensor] = {}
    for name, shape in expected_shapes(config).items():
        if name.endswith(".g"):
            data = np.ones(shape)
        elif len(shape) == 1:
            data = np.zeros(shape)
        else:
            limit = 1.0 / math.sqrt(shape[0])
            data = rng.uniform(-limit, limit, size=shape)
        tensors[name] = Tensor(data, requires_grad=True)
    return Params(tensors)


def shape_audit(params: Params, config: ModelConfig) -> None:
    expected = expected_shapes(config)
    for name, shape in expected.items():
        if name not in params.tensors:
            raise CheckpointMismatchError(name, shape, "missing")
        got = params[name].shape
        if got != shape:
            raise CheckpointMismatchError(name, shape, got)
    extra = set(params.tensors) - set(expected)
    if extra:
        name = sorted(extra)[0]
        raise CheckpointMismatchError(name, "absent", params[name].shape)


@lru_cache(maxsize=32)
def _positional_encoding(t: int, d: int) -> np.ndarray:
    pos = np.arange(t)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    enc = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return np.ascontiguousarray(enc)


def _embed(ids: list[int], params: Params, config: ModelConfig) -> Tensor:
    if not ids:
        raise EmptyInputError("cannot embed an empty sequence")
    emb = ag.rows(params["embed"], ids)
    pos = Tensor(_positional_encoding(len(ids), config.d_model))
    return ag.add(emb, pos)


def _attention(x: Tensor, prefix: str, params: Params, config: ModelConfig,
               mask: Tensor | None = None) -> Tensor:
    d, h = config.d_model, config.n_heads
    dh = d // h
    q = ag.add_bias(ag.matmul(x, params[f"{prefix}.attn.wq"]), params[f"{prefix}.attn.bq"])
    k = ag.add_bias(ag.matmul(x, params[f"{prefix}.attn.wk"]), params[f"{prefix}.attn.bk"])
    v = ag.add_bias(ag.matmul(x, params[f"{prefix}.attn.wv"]), params[f"{prefix}.attn.bv"])
    heads = []
    for i in range(h):
        qa = ag.cols(q, i * dh, (i + 1) * dh)
        ka = ag.cols(k, i * dh, (i + 1) * dh)
        va = ag.cols(v, i * dh, (i + 1) * dh)
        scores = ag.scale(ag.matmul(qa, ag.transpose(ka)), 1.0 / math.sqrt(dh))
        if mask is not None:
            scores = ag.add(scores, mask)
        heads.append(ag.matmul(ag.softmax(scores, axis=1), va))
    merged = heads[0] if h == 1 else ag.concat(heads, axis=1)
    return ag.add_bias(ag.matmul(merged, params[f"{prefix}.attn.wo"]), params[f"{prefix}.attn.bo"])


def _ffn(x: Tensor, prefix: str, params: Params) -> Tensor:
    hidden = ag.relu(ag.add_bias(ag.matmul(x, params[f"{prefix}.ffn.w1"]), params[f"{prefix}.ffn.b1"]))
    return ag.add_bias(ag.matmul(hidden, params[f"{prefix}.ffn.w2"]), params[f"{prefix}.ffn.b2"])


def _transformer_stack(x: Tensor, stack: str, n_layers: int, params: Params,
                       config: ModelConfig, mask: Tensor | None = None) -> Tensor:
    for i in range(n_layers):
        prefix = f"{stack}.{i}"
        x = ag.layer_norm(ag.add(x, _attention(x, prefix, params, config, mask)),
                          params[f"{prefix}.ln1.g"], params[f"{prefix}.ln1.b"])
        x = ag.layer_norm(ag.add(x, _ffn(x, prefix, params)),
                          params[f"{prefix}.ln2.g"], params[f"{prefix}.ln2.b"])
    return x


def encode(ids: list[int], which: str, params: Params, config: ModelConfig) -> Tensor:
    """Contextual states [T, d] for a document or previous-summary sequence."""
    if which not in ("document", "prev_summary"):
        raise ValueError(f"unknown sequence kind {which!r}")
    limit = config.max_doc_len if which == "document" else config.max_prev_summary_len
    if not ids:
        raise EmptyInputError(f"encode: empty {which}")
    if len(ids) > limit:
        raise ag.ContractError(f"encode: {which} length {len(ids)} exceeds limit {limit}")
    x = _embed(ids, params, config)
    return _transformer_stack(x, "enc", config.n_enc_layers, params, config)


def summary_query(h_s: Tensor | None, config: ModelConfig) -> Tensor:
    """Average previous-summary state, [1, d]; zeros when the stream has no
    history yet (first-in-stream mode)."""
    if h_s is None:
        return Tensor(np.zeros((1, config.d_model)))
    return ag.mean_rows(h_s)


def selective_polish(h_d: Tensor, q: Tensor, params: Params, config: ModelConfig) -> Tensor:
    """Gated polishing pass over document states.

    The candidate/reset recurrence is a standard gated cell; what replaces
    the usual update gate is an interaction score between each document
    word and the query q, turned into a gate by normalizing across all
    document positions (per hidden dimension). The normalization needs all
    positions up front, so gates are computed before the recurrence runs.
    With gate_mode="sigmoid" the standard positionwise gate is used instead.
    """
    t_d = h_d.shape[0]
    d = config.d_model
    if config.gate_mode == "position_softmax":
        q_rows = ag.tile_rows(q, t_d)
        interact = ag.concat([ag.mul(h_d, q_rows), h_d, q_rows], axis=1)
        scores = ag.add_bias(
            ag.matmul(ag.tanh(ag.add_bias(ag.matmul(interact, params["sru.w5"]), params["sru.b5"])),
                      params["sru.w4"]),
            params["sru.b4"],
        )
        gates = ag.softmax(scores, axis=0)  # [T, d], each column sums to 1
    else:
        gates = None
    ones = Tensor(np.ones((1, d)))
    h_prev = Tensor(np.zeros((1, d)))
    out_rows = []
    for t in range(t_d):
        x_t = ag.rows(h_d, [t])
        reset = ag.sigmoid(ag.add_bias(
            ag.add(ag.matmul(x_t, params["sru.w2"]), ag.matmul(h_prev, params["sru.u2"])),
            params["sru.b2"],
        ))
        cand = ag.tanh(ag.add_bias(
            ag.add(ag.matmul(x_t, params["sru.w3"]),
                   ag.mul(reset, ag.matmul(h_prev, params["sru.u3"]))),
            params["sru.b3"],
        ))
        if gates is not None:
            u_t = ag.rows(gates, [t])
        else:
            u_t = standard_update_gate(x_t, h_prev, params)
        h_prev = ag.add(ag.mul(u_t, cand), ag.mul(ag.sub(ones, u_t), h_prev))
        out_rows.append(h_prev)
    return out_rows[0] if t_d == 1 else ag.concat(out_rows, axis=0)


def standard_update_gate(x_t: Tensor, h_prev: Tensor, params: Params) -> Tensor:
    """The plain gated-recurrence update gate (kept for the sigmoid mode)."""
    return ag.sigmoid(ag.add_bias(
        ag.add(ag.matmul(x_t, params["sru.w1"]), ag.matmul(h_prev, params["sru.u1"])),
        params["sru.b1"],
    ))


@lru_cache(maxsize=64)
def _causal_mask(t: int) -> np.ndarray:
    mask = np.zeros((t, t))
    mask[np.triu_indices(t, k=1)] = -np.inf
    return mask


def decoder_states(input_ids: list[int], params: Params, config: ModelConfig) -> Tensor:
    """Masked self-attention stack over the (shifted) summary prefix."""
    if not input_ids:
        raise EmptyInputError("decoder_states: empty input")
    x = _embed(input_ids, params, config)
    mask = Tensor(_causal_mask(len(input_ids)))
    return _transformer_stack(x, "dec", config.n_dec_layers, params, config, mask=mask)


def readout_logits(g: Tensor, h_g: Tensor, h_s: Tensor | None, params: Params,
                   config: ModelConfig) -> Tensor:
    """Vocabulary logits from decoder states plus the two context channels.

    Attention scores are bilinear; in the default mode they pass through a
    ReLU with no normalization, so context vectors scale with the score
    magnitude. The softmax mode normalizes the same scores over positions.
    """
    t = g.shape[0]

    def context(states: Tensor, w_left: str, w_right: str) -> Tensor:
        scores = ag.matmul(ag.matmul(g, params[w_left]),
                           ag.transpose(ag.matmul(states, params[w_right])))
        if config.attention_score_mode == "relu":
            weights = ag.relu(scores)
        else:
            weights = ag.softmax(scores, axis=1)
        return ag.matmul(weights, states)

    c_doc = context(h_g, "xattn.wa", "xattn.wb")
    if h_s is None:
        c_prev = Tensor(np.zeros((t, config.d_model)))
    else:
        c_prev = context(h_s, "xattn.wc", "xattn.wd")
    return ag.matmul(ag.concat([g, c_doc, c_prev], axis=1), params["out.wo"])


def forward_logits(doc_ids: list[int], prev_ids: list[int], target_input_ids: list[int],
                   params: Params, config: ModelConfig, polish: bool = True) -> Tensor:
    """Teacher-forced logits [len(target_input_ids), vocab] for one example."""
    if not doc_ids:
        raise EmptyInputError("forward_logits: a document is always required")
    h_d = encode(doc_ids, "document", params, config)
    h_s = encode(prev_ids, "prev_summary", params, config) if prev_ids else None
    if polish:
        q = summary_query(h_s, config)
        h_g = selective_polish(h_d, q, params, config)
    else:
        h_g = h_d
    g = decoder_states(target_input_ids, params, config)
    return readout_logits(g, h_g, h_s, params, config)


def vocab_distribution(logits: Tensor) -> Tensor:
    """Rows of strictly positive probabilities summing to one."""
    return ag.softmax(logits, axis=1)


def decoder_step(prefix_ids: list[int], h_g: Tensor, h_s: Tensor | None,
                 params: Params, config: ModelConfig) -> tuple[Tensor, Tensor]:
    """One decoding step: states and next-token distribution for the last
    position of the prefix (prefix starts with BOS)."""
    g = decoder_states(prefix_ids, params, config)
    g_last = ag.rows(g, [g.shape[0] - 1])
    logits = readout_logits(g_last, h_g, h_s, params, config)
    return g_last, vocab_distribution(logits)


def teacher_forcing_pair(gold_ids: list[int]) -> tuple[list[int], list[int]]:
    """Decoder input (BOS-shifted) and target (gold plus EOS)."""
    return [BOS] + list(gold_ids), list(gold_ids) + [EOS]


def sequence_nll(logits: Tensor, target_ids: list[int]) -> Tensor:
    """Summed negative log-likelihood; positions with id PAD (0) excluded."""
    targets = [tid if tid != 0 else -1 for tid in target_ids]
    return ag.nll_from_logits(logits, targets)


def nll_loss(doc_ids: list[int], prev_ids: list[int], gold_ids: list[int],
             params: Params, config: ModelConfig, polish: bool = True) -> Tensor:
    dec_in, dec_target = teacher_forcing_pair(gold_ids)
    logits = forward_logits(doc_ids, prev_ids, dec_in, params, config, polish=polish)
    return sequence_nll(logits, dec_target)


# ---------------------------------------------------------------------------
# coherence head


def discriminate(h_s: Tensor, candidate_states: Tensor, source: str,
                 params: Params, config: ModelConfig) -> Tensor:
    """Probability in (0, 1) that the candidate coheres with the previous
    summary.

    Gold candidates arrive as encoder states and pass through the linear
    projection into decoder-state space; generated candidates already are
    decoder states and skip it. Both channels are zero-padded to a common
    length with a full kernel-width margin, so that every kernel width sees
    at least one all-zero window; padding further never changes the pooled
    features, making the output independent of padding length.
    """
    if source not in ("encoded_gold", "decoder_generated"):
        raise ValueError(f"unknown candidate source {source!r}")
    if h_s.shape[0] < 1 or candidate_states.shape[0] < 1:
        raise EmptyInputError("discriminate: both channels need at least one state")
    if source == "encoded_gold":
        cand = ag.add_bias(ag.matmul(candidate_states, params["disc.wz"]), params["disc.bz"])
    else:
        cand = candidate_states
    total = max(h_s.shape[0], cand.shape[0]) + max(config.conv_widths)
    paired = ag.concat([ag.pad_rows(h_s, total), ag.pad_rows(cand, total)], axis=1)
    kernels = [(w, params[f"disc.conv.w{w}"], params[f"disc.conv.b{w}"])
               for w in config.conv_widths]
    pooled = ag.conv1d_maxpool(paired, kernels)
    logit = ag.add_bias(ag.matmul(ag.relu(pooled), params["disc.wh"]), params["disc.bh"])
    return ag.sigmoid(logit)


def gan_losses(d_pos: Tensor, d_neg: Tensor) -> tuple[Tensor, Tensor]:
    """Discriminator and generator objectives from the two coherence scores.

    Scores are clamped away from {0, 1} before the logs; tiny models
    saturate quickly. The discriminator pushes the gold pair toward 1 and
    the generated pair toward 0; the generator minimizes log(1 - D(neg)),
    i.e. pushes its own pair toward 1.
    """
    eps = 1e-7
    one = Tensor(np.ones(d_pos.shape))
    dp = ag.clamp(d_pos, eps, 1.0 - eps)
    dn = ag.clamp(d_neg, eps, 1.0 - eps)
    l_d = ag.scale(ag.add(ag.sum_all(ag.log(dp)), ag.sum_all(ag.log(ag.sub(one, dn)))), -1.0)
    l_g = ag.sum_all(ag.log(ag.sub(one, dn)))
    return l_d, l_g


def coherence_inputs(prev_ids: list[int], gold_ids: list[int], generated_ids: list[int],
                     params: Params, config: ModelConfig) -> tuple[Tensor, Tensor, Tensor]:
    """(h_s, gold encoder states, generated decoder states) for the head.

    An empty previous summary contributes a single zero row; the generated
    candidate's states are the teacher-forced decoder states of its own
    tokens (the states that emitted them).
    """
    if prev_ids:
        h_s = encode(prev_ids, "prev_summary", params, config)
    else:
        h_s = Tensor(np.zeros((1, config.d_model)))
    h_y = encode(gold_ids, "prev_summary", params, config)
    gen_input = [BOS] + list(generated_ids[:-1]) if generated_ids else [BOS]
    g_states = decoder_states(gen_input, params, config)
    return h_s, h_y, g_states


def adversarial_losses(doc_ids: list[int], prev_ids: list[int], gold_ids: list[int],
                       generated_ids: list[int], params: Params,
                       config: ModelConfig) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """L_d and L_g (plus raw scores) with the full graph attached."""
    h_s, h_y, g_states = coherence_inputs(prev_ids, gold_ids, generated_ids, params, config)
    d_pos = discriminate(h_s, h_y, "encoded_gold", params, config)
    d_neg = discriminate(h_s, g_states, "decoder_generated", params, config)
    l_d, l_g = gan_losses(d_pos, d_neg)
    return l_d, l_g, d_pos, d_neg


# ---------------------------------------------------------------------------
# checkpoints: text manifest, then little-endian float64 payload


def save_checkpoint(params: Params, path) -> None:
    manifest = io.StringIO()
    payload = io.BytesIO()
    offset = 0
    for name, t in params.items():
        shape = "x".join(str(s) for s in t.shape)
        manifest.write(f"{name} {shape} {offset}\n")
        raw = t.data.astype("<f8").tobytes()
        payload.write(raw)
        offset += len(raw)
    with open(path, "wb") as fh:
        fh.write(manifest.getvalue().encode("ascii"))
        fh.write(b"data\n")
        fh.write(payload.getvalue())


def load_checkpoint(path, config: ModelConfig) -> Params:
    """Load and validate every parameter shape against the config."""
    with open(path, "rb") as fh:
        blob = fh.read()
    marker = blob.find(b"data\n")
    if marker < 0:
        raise ValueError(f"{path}: not a checkpoint (missing data marker)")
    header = blob[:marker].decode("ascii")
    payload = blob[marker + 5 :]
    expected = expected_shapes(config)
    tensors: dict[str, Tensor] = {}
    for line in header.splitlines():
        name, shape_s, offset_s = line.split()
        shape = tuple(int(s) for s in shape_s.split("x"))
        if name not in expected:
            raise CheckpointMismatchError(name, "absent", shape)
        if expected[name] != shape:
            raise CheckpointMismatchError(name, expected[name], shape)
        count = int(np.prod(shape))
        start = int(offset_s)
        data = np.frombuffer(payload, dtype="<f8", count=count, offset=start)
        tensors[name] = Tensor(data.reshape(shape).copy(), requires_grad=True)
    for name in expected:
        if name not in tensors:
            raise CheckpointMismatchError(name, expected[name], "missing")
    return Params(tensors)
