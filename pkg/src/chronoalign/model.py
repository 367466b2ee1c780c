"""The cross-modal aligner network.

Per-frame modality encoders project both streams into a joint space,
pairwise Euclidean distances form the temporal encoding, an LSTM encoder
consumes the distance rows, and an attention-modulated LSTM decoder
emits one video-index distribution per audio frame. Includes the
two-phase training procedure (shift-only pretraining, then full
augmented data).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .seeding import derive_seed, rng_for
from .synth import SENTINEL, TrainingExample


@dataclass(frozen=True)
class AlignerConfig:
    n: int = 25                    # audio window frames
    m: int = 75                    # video window frames
    audio_dim: int = 16
    video_dim: int = 16
    enc_hidden: int = 64
    embed_dim: int = 32            # joint-space encoder output size
    rnn_hidden: int = 64
    rnn_layers: int = 1
    mlp_hidden: tuple = (64,)
    attn_dim: int = 64
    y_embed_dim: int = 16
    dropout_p: float = 0.1
    use_attention: bool = True

    def __post_init__(self):
        if self.m < self.n:
            raise ValueError("video window must be at least the audio window")
        object.__setattr__(self, "mlp_hidden", tuple(self.mlp_hidden))

    @property
    def sos_index(self) -> int:
        return self.m


@dataclass
class ModelParams:
    """All learnable weights, keyed by name, plus the config that shaped them."""

    config: AlignerConfig
    tensors: dict

    def __getitem__(self, key) -> Tensor:
        return self.tensors[key]

    def save(self, path, step: int = 0, rng_seed: int = 0) -> None:
        extra = {"config": asdict(self.config)}
        ad.save_checkpoint(path, self.tensors, step=step, rng_seed=rng_seed, extra=extra)

    @classmethod
    def load(cls, path):
        tensors, header = ad.load_checkpoint(path)
        cfg = AlignerConfig(**header["extra"]["config"])
        return cls(cfg, tensors), header


def _lstm_layer_params(rng, in_size: int, hidden: int) -> dict:
    wx = np.concatenate([ad.semi_orthogonal((in_size, hidden), rng) for _ in range(4)], axis=1)
    wh = np.concatenate([ad.semi_orthogonal((hidden, hidden), rng) for _ in range(4)], axis=1)
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0  # forget-gate bias
    return {"wx": wx, "wh": wh, "b": b}


def init_params(cfg: AlignerConfig, rng: np.random.Generator) -> ModelParams:
    t = {}

    def dense(prefix, in_size, out_size):
        t[f"{prefix}_w"] = ad.xavier_normal((in_size, out_size), rng)
        t[f"{prefix}_b"] = np.zeros(out_size)

    dense("enc_a1", cfg.audio_dim, cfg.enc_hidden)
    dense("enc_a2", cfg.enc_hidden, cfg.embed_dim)
    dense("enc_v1", cfg.video_dim, cfg.enc_hidden)
    dense("enc_v2", cfg.enc_hidden, cfg.embed_dim)
    for layer in range(cfg.rnn_layers):
        in_size = cfg.m if layer == 0 else cfg.rnn_hidden
        for k, v in _lstm_layer_params(rng, in_size, cfg.rnn_hidden).items():
            t[f"rnn_e{layer}_{k}"] = v
        in_size = cfg.y_embed_dim + cfg.rnn_hidden if layer == 0 else cfg.rnn_hidden
        for k, v in _lstm_layer_params(rng, in_size, cfg.rnn_hidden).items():
            t[f"rnn_d{layer}_{k}"] = v
    t["attn_w"] = ad.xavier_normal((cfg.rnn_hidden, cfg.attn_dim), rng)
    t["attn_v"] = ad.xavier_normal((cfg.rnn_hidden, cfg.attn_dim), rng)
    t["attn_u"] = ad.xavier_normal((cfg.attn_dim, 1), rng)
    t["attn_b"] = np.zeros(cfg.attn_dim)
    t["y_embed"] = ad.xavier_normal((cfg.m + 1, cfg.y_embed_dim), rng)
    sizes = [2 * cfg.rnn_hidden, *cfg.mlp_hidden, cfg.m]
    for i in range(len(sizes) - 1):
        dense(f"mlp{i}", sizes[i], sizes[i + 1])
    return ModelParams(cfg, {k: ad.parameter(v) for k, v in t.items()})


# ---------------------------------------------------------------------------
# forward pieces (batched; leading axis B everywhere)

def _encoder(x: Tensor, params: ModelParams, prefix: str) -> Tensor:
    h = ad.relu(ad.add(ad.matmul(x, params[f"{prefix}1_w"]), params[f"{prefix}1_b"]))
    return ad.add(ad.matmul(h, params[f"{prefix}2_w"]), params[f"{prefix}2_b"])


def encode_inputs_batch(audio: Tensor, video: Tensor, params: ModelParams,
                        swap_roles: bool = False):
    """(B, n, d_q), (B, m, d_k) -> query/key embeddings in the joint space.

    With swap_roles, the n query frames are video features and the m key
    frames are audio features (the role-reversed audio-warp mode); each
    modality keeps its own encoder either way.
    """
    if swap_roles:
        psi_q = _encoder(audio, params, "enc_v")
        psi_k = _encoder(video, params, "enc_a")
    else:
        psi_q = _encoder(audio, params, "enc_a")
        psi_k = _encoder(video, params, "enc_v")
    return psi_q, psi_k


def _lstm_stack(params: ModelParams, prefix: str, x: Tensor, states: list):
    """Advance every layer one step; returns (top output, new states)."""
    cfg = params.config
    new_states = []
    inp = x
    for layer in range(cfg.rnn_layers):
        h, c = states[layer]
        h, c = ad.lstm_cell(inp, h, c, params[f"{prefix}{layer}_wx"],
                            params[f"{prefix}{layer}_wh"], params[f"{prefix}{layer}_b"])
        new_states.append((h, c))
        inp = h
    return inp, new_states


def _zero_states(cfg: AlignerConfig, batch: int) -> list:
    z = lambda: ad.constant(np.zeros((batch, cfg.rnn_hidden)))
    return [(z(), z()) for _ in range(cfg.rnn_layers)]


def standardize_window(rho: Tensor) -> Tensor:
    """Zero-mean/unit-variance per distance window (fully differentiable).

    Raw pairwise distances carry a large DC offset that grows as the
    encoders spread the embedding space; without conditioning it
    saturates the recurrent gates and kills the gradient through the
    distance path.
    """
    batch = rho.shape[0]
    flat = ad.reshape(rho, (batch, -1))
    mu = ad.reshape(ad.mean_(flat, axis=1), (batch, 1))
    centered = ad.sub(flat, mu)
    var = ad.reshape(ad.mean_(ad.mul(centered, centered), axis=1), (batch, 1))
    sd = ad.sqrt_(ad.add(var, ad.constant(np.full((batch, 1), 1e-8))))
    return ad.reshape(ad.div(centered, sd), rho.shape)


def encode_sequence_batch(rho: Tensor, params: ModelParams):
    """Run the encoder LSTM over standardized distance rows.

    (B, n, m) -> (B, n, h) + final states; rows are standardized over
    the whole window (see standardize_window) before the first layer.
    """
    cfg = params.config
    batch, n = rho.shape[0], rho.shape[1]
    rho = standardize_window(rho)
    states = _zero_states(cfg, batch)
    outputs = []
    for i in range(n):
        x = ad.slice_(rho, (slice(None), i, slice(None)))
        out, states = _lstm_stack(params, "rnn_e", x, states)
        outputs.append(ad.reshape(out, (batch, 1, cfg.rnn_hidden)))
    return ad.concat(outputs, axis=1), states


def attention_batch(h_dec: Tensor, enc_out: Tensor, enc_keys: Tensor, params: ModelParams):
    """Additive attention: returns (context (B, h), alpha (B, n))."""
    batch = h_dec.shape[0]
    q = ad.reshape(ad.matmul(h_dec, params["attn_w"]), (batch, 1, params.config.attn_dim))
    scores = ad.matmul(ad.tanh(ad.add(ad.add(q, enc_keys), params["attn_b"])), params["attn_u"])
    alpha = ad.softmax(ad.reshape(scores, (batch, enc_out.shape[1])), axis=-1)
    ctx = ad.matmul(ad.reshape(alpha, (batch, 1, enc_out.shape[1])), enc_out)
    return ad.reshape(ctx, (batch, enc_out.shape[2])), alpha


def _mlp(x: Tensor, params: ModelParams) -> Tensor:
    n_layers = 1 + len(params.config.mlp_hidden)
    for i in range(n_layers):
        x = ad.add(ad.matmul(x, params[f"mlp{i}_w"]), params[f"mlp{i}_b"])
        if i < n_layers - 1:
            x = ad.relu(x)
    return x


def _decoder_step(params: ModelParams, y_prev, ctx, states, enc_out, enc_keys,
                  final_enc, training: bool = False,
                  dropout_rng: np.random.Generator | None = None):
    """Advance the decoder one step for a batch of hypotheses.

    y_prev: (B,) previous indices; ctx: (B, h) context Tensor; states:
    decoder LSTM states. Returns (logits Tensor (B, m), states, ctx).
    """
    emb = ad.embedding(params["y_embed"], y_prev)
    emb = ad.dropout(emb, params.config.dropout_p, training, dropout_rng)
    x = ad.concat([emb, ctx], axis=-1)
    o_dec, states = _lstm_stack(params, "rnn_d", x, states)
    if params.config.use_attention:
        ctx, _ = attention_batch(o_dec, enc_out, enc_keys, params)
    else:
        ctx = final_enc
    logits = _mlp(ad.concat([o_dec, ctx], axis=-1), params)
    return logits, states, ctx


def forward_batch(audio, video, params: ModelParams, mode: str = "free_running",
                  targets=None, training: bool = False,
                  dropout_rng: np.random.Generator | None = None,
                  swap_roles: bool = False, self_feedback_p: float = 0.0,
                  feedback_rng: np.random.Generator | None = None):
    """Run the full aligner over a batch of windows.

    audio (B, n, da), video (B, m, dv). In teacher_forced mode, `targets`
    (B, n) supplies the fed-back index for the next step wherever it is
    not the sentinel; sentinel positions fall back to the prediction and
    are masked out of the loss. With self_feedback_p > 0 (scheduled
    sampling) each example independently feeds back its own prediction
    instead of the ground-truth index with that probability per step,
    which closes the train/inference gap of pure teacher forcing; the
    loss is always computed against the targets.

    Returns (loss Tensor or None, n_loss_terms, probs (B, n, m), preds (B, n)).
    """
    cfg = params.config
    if mode not in ("teacher_forced", "free_running"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "teacher_forced" and targets is None:
        raise ValueError("teacher_forced mode needs targets")
    audio = audio if isinstance(audio, Tensor) else ad.constant(audio)
    video = video if isinstance(video, Tensor) else ad.constant(video)
    batch, n = audio.shape[0], audio.shape[1]
    if audio.shape[1] != cfg.n or video.shape[1] != cfg.m:
        raise ValueError(f"window sizes {audio.shape[1]}x{video.shape[1]} "
                         f"do not match config {cfg.n}x{cfg.m}")

    psi_q, psi_k = encode_inputs_batch(audio, video, params, swap_roles=swap_roles)
    rho = ad.pairwise_distance(psi_q, psi_k)
    enc_out, enc_states = encode_sequence_batch(rho, params)
    enc_keys = ad.matmul(enc_out, params["attn_v"]) if cfg.use_attention else None
    final_enc = ad.slice_(enc_out, (slice(None), cfg.n - 1, slice(None)))

    states = enc_states  # decoder starts from the encoder's final states
    y_prev = np.full(batch, cfg.sos_index, dtype=np.int64)
    ctx = ad.constant(np.zeros((batch, cfg.rnn_hidden)))
    losses, n_terms = [], 0
    probs = np.empty((batch, n, cfg.m))
    preds = np.empty((batch, n), dtype=np.int64)
    for k in range(n):
        logits, states, ctx = _decoder_step(params, y_prev, ctx, states, enc_out,
                                            enc_keys, final_enc, training=training,
                                            dropout_rng=dropout_rng)
        z = logits.data - logits.data.max(axis=-1, keepdims=True)
        e = np.exp(z)
        probs[:, k] = e / e.sum(axis=-1, keepdims=True)
        preds[:, k] = np.argmax(logits.data, axis=-1)
        if targets is not None:
            mask = targets[:, k] != SENTINEL
            if mask.any():
                losses.append(ad.cross_entropy_sum(logits, targets[:, k], mask))
                n_terms += int(mask.sum())
        if mode == "teacher_forced":
            y_prev = np.where(targets[:, k] != SENTINEL, targets[:, k], preds[:, k])
            if self_feedback_p > 0.0 and feedback_rng is not None:
                use_own = feedback_rng.random(batch) < self_feedback_p
                y_prev = np.where(use_own, preds[:, k], y_prev)
        else:
            y_prev = preds[:, k]
    loss = None
    if losses:
        total = losses[0]
        for extra in losses[1:]:
            total = ad.add(total, extra)
        loss = ad.scale(total, 1.0 / max(n_terms, 1))
    return loss, n_terms, probs, preds


# ---------------------------------------------------------------------------
# single-example operation surface

@dataclass
class EncodedPair:
    psi_a: np.ndarray  # (n, embed_dim)
    psi_v: np.ndarray  # (m, embed_dim)


def encode_inputs(audio_window, video_window, params: ModelParams) -> EncodedPair:
    a = _encoder(ad.constant(np.asarray(audio_window)), params, "enc_a")
    v = _encoder(ad.constant(np.asarray(video_window)), params, "enc_v")
    return EncodedPair(a.data, v.data)


def distance_features(pair: EncodedPair) -> np.ndarray:
    """Per-query distance rows: d[i, j] = ||psi_a[i] - psi_v[j]||."""
    return ad.pairwise_distance(ad.constant(pair.psi_a), ad.constant(pair.psi_v)).data


def encode_sequence(rho, params: ModelParams):
    out, states = encode_sequence_batch(ad.constant(np.asarray(rho)[None]), params)
    finals = [(h.data[0], c.data[0]) for h, c in states]
    return out.data[0], finals


def attention(h_dec, enc_out, params: ModelParams):
    enc = ad.constant(np.asarray(enc_out)[None])
    keys = ad.matmul(enc, params["attn_v"])
    ctx, alpha = attention_batch(ad.constant(np.asarray(h_dec)[None]), enc, keys, params)
    return ctx.data[0], alpha.data[0]


def decode_step(state, y_prev: int, ctx_prev, enc_out, params: ModelParams,
                mode: str = "free_running", target: int | None = None,
                training: bool = False, dropout_rng=None):
    """One decoder step on a single window.

    state: list of (h, c) numpy pairs per LSTM layer (start from the
    encoder finals); y_prev in [0, m] with m the start symbol; ctx_prev
    the previous context vector. Returns (p (m,), y, new_state, ctx).
    In teacher_forced mode the caller feeds `target` as the next y_prev.
    """
    cfg = params.config
    if not 0 <= y_prev <= cfg.m:
        raise ValueError(f"y_prev {y_prev} out of range [0, {cfg.m}]")
    if mode not in ("teacher_forced", "free_running"):
        raise ValueError(f"unknown mode {mode!r}")
    states = [(ad.constant(h[None]), ad.constant(c[None])) for h, c in state]
    enc = ad.constant(np.asarray(enc_out)[None])
    emb = ad.embedding(params["y_embed"], np.array([y_prev]))
    emb = ad.dropout(emb, cfg.dropout_p, training, dropout_rng)
    x = ad.concat([emb, ad.constant(np.asarray(ctx_prev)[None])], axis=-1)
    o_dec, states = _lstm_stack(params, "rnn_d", x, states)
    if cfg.use_attention:
        keys = ad.matmul(enc, params["attn_v"])
        ctx, _ = attention_batch(o_dec, enc, keys, params)
    else:
        ctx = ad.slice_(enc, (slice(None), enc.shape[1] - 1, slice(None)))
    logits = _mlp(ad.concat([o_dec, ctx], axis=-1), params)
    z = logits.data[0] - logits.data[0].max()
    e = np.exp(z)
    p = e / e.sum()
    y = int(np.argmax(logits.data[0]))
    new_state = [(h.data[0], c.data[0]) for h, c in states]
    return p, y, new_state, ctx.data[0]


def forward_full(audio_window, video_window, params: ModelParams,
                 mode: str = "free_running", targets=None, swap_roles: bool = False):
    """Single-window forward: returns (P (n, m), Y (n,))."""
    t = None if targets is None else np.asarray(targets)[None]
    _, _, probs, preds = forward_batch(np.asarray(audio_window)[None],
                                       np.asarray(video_window)[None], params,
                                       mode=mode, targets=t, swap_roles=swap_roles)
    return probs[0], preds[0]


def lattice_decode_batch(audio, video, params: ModelParams,
                         distance_weight: float = 0.5,
                         beam_width: int | None = 24,
                         swap_roles: bool = False) -> np.ndarray:
    """Joint max-product decode over whole windows (token passing).

    Greedy free-running decoding commits to a single feedback history
    and drifts permanently once one index is wrong: repeated video
    frames make the error locally invisible to the decoder, which then
    confidently continues from the wrong anchor. This decode instead
    keeps one live hypothesis per candidate previous index. Every step,
    each hypothesis is advanced through the decoder; a candidate index
    is scored by the decoder's log-probability plus ``-distance_weight``
    times its entry in the standardized distance row, and hypotheses
    are merged per index (Viterbi recursion, LSTM state inherited from
    the best predecessor). The distance term re-anchors the path on the
    window evidence wherever the fed-back label alone is ambiguous.
    beam_width keeps only the best-scoring hypotheses alive per step
    (None or >= m is exhaustive over indices).

    audio (B, n, da), video (B, m, dv) -> predicted indices (B, n).
    """
    cfg = params.config
    audio = audio if isinstance(audio, Tensor) else ad.constant(audio)
    video = video if isinstance(video, Tensor) else ad.constant(video)
    batch, n, m = audio.shape[0], cfg.n, cfg.m
    if audio.shape[1] != n or video.shape[1] != m:
        raise ValueError(f"window sizes {audio.shape[1]}x{video.shape[1]} "
                         f"do not match config {n}x{m}")
    width = m if beam_width is None else min(beam_width, m)

    psi_q, psi_k = encode_inputs_batch(audio, video, params, swap_roles=swap_roles)
    rho_t = ad.pairwise_distance(psi_q, psi_k)
    rho = rho_t.data
    flat = rho.reshape(batch, -1)
    srho = ((rho - flat.mean(axis=1)[:, None, None])
            / np.sqrt(flat.var(axis=1) + 1e-8)[:, None, None])
    enc_out, enc_states = encode_sequence_batch(rho_t, params)
    enc_keys = ad.matmul(enc_out, params["attn_v"]) if cfg.use_attention else None
    final_enc = ad.slice_(enc_out, (slice(None), n - 1, slice(None)))

    def log_softmax(logits):
        z = logits - logits.max(axis=-1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))

    # first step: one hypothesis per example, fed the start symbol
    y_prev = np.full(batch, cfg.sos_index, dtype=np.int64)
    ctx = ad.constant(np.zeros((batch, cfg.rnn_hidden)))
    logits, states, ctx = _decoder_step(params, y_prev, ctx, states=enc_states,
                                        enc_out=enc_out, enc_keys=enc_keys,
                                        final_enc=final_enc)
    score = log_softmax(logits.data) - distance_weight * srho[:, 0]  # (B, m)
    back = np.empty((batch, n, m), dtype=np.int64)

    # keep the `width` best indices alive, one token each (B*width rows);
    # after the first step every token still shares its example's state
    rows = np.arange(batch)[:, None]
    active = np.argsort(-score, axis=1)[:, :width]  # (B, width) label ids
    rep = np.repeat(np.arange(batch), width)
    tok_states = [(ad.constant(h.data[rep]), ad.constant(c.data[rep]))
                  for h, c in states]
    tok_ctx = ad.constant(ctx.data[rep])
    tok_enc = ad.constant(enc_out.data[rep])
    tok_keys = ad.matmul(tok_enc, params["attn_v"]) if cfg.use_attention else None
    tok_final = ad.constant(final_enc.data[rep])
    for k in range(1, n):
        y_tok = active.ravel()
        logits, new_states, new_ctx = _decoder_step(params, y_tok, tok_ctx,
                                                    states=tok_states,
                                                    enc_out=tok_enc,
                                                    enc_keys=tok_keys,
                                                    final_enc=tok_final)
        logp = log_softmax(logits.data).reshape(batch, width, m)
        cand = (score[rows, active][:, :, None] + logp
                - distance_weight * srho[:, k][:, None, :])  # (B, width, m)
        best_pos = cand.argmax(axis=1)                       # (B, m) token slot
        back[:, k] = active[rows, best_pos]
        score = cand.max(axis=1)
        active = np.argsort(-score, axis=1)[:, :width]
        sel = (best_pos[rows, active] + np.arange(batch)[:, None] * width).ravel()
        tok_states = [(ad.constant(h.data[sel]), ad.constant(c.data[sel]))
                      for h, c in new_states]
        tok_ctx = ad.constant(new_ctx.data[sel])

    preds = np.empty((batch, n), dtype=np.int64)
    preds[:, -1] = score.argmax(axis=1)
    for k in range(n - 1, 0, -1):
        preds[:, k - 1] = back[np.arange(batch), k, preds[:, k]]
    return preds


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainSettings:
    phase1_epochs: int = 5
    phase2_epochs: int = 20
    batch_size: int = 4
    lr: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.999
    jitter_sigma: float = 0.05
    self_feedback_p: float = 0.5  # scheduled-sampling probability
    phase1_contrastive: bool = True  # pretrain encoders on softmax(-distance)
    seed: int = 0
    val_examples: int = 200
    reset_after_phase1: bool = False  # discard RNN/MLP weights between phases


class _ExampleCache:
    def __init__(self, dataset, shift_only: bool):
        self.dataset = dataset
        self.shift_only = shift_only
        self._cache = {}

    def __call__(self, index: int) -> TrainingExample:
        if index not in self._cache:
            self._cache[index] = self.dataset.example(index, shift_only=self.shift_only)
        return self._cache[index]


def _gather(examples) -> tuple:
    audio = np.stack([ex.audio for ex in examples])
    video = np.stack([ex.video for ex in examples])
    targets = np.stack([ex.labels for ex in examples])
    return audio, video, targets


def evaluate_model(params: ModelParams, examples, batch: int = 64,
                   decode: str = "greedy", distance_weight: float = 0.5) -> dict:
    """Per-frame accuracy and shift error over full examples.

    decode="greedy" runs free-running argmax; decode="lattice" runs the
    joint max-product decode (lattice_decode_batch).
    """
    if decode not in ("greedy", "lattice"):
        raise ValueError(f"unknown decode {decode!r}")
    correct = total = 0
    abs_err_sum = 0.0
    max_err = 0
    if decode == "lattice":
        batch = min(batch, 25)  # token batch is m hypotheses per example
    for lo in range(0, len(examples), batch):
        audio, video, targets = _gather(examples[lo:lo + batch])
        if decode == "lattice":
            preds = lattice_decode_batch(audio, video, params,
                                         distance_weight=distance_weight)
        else:
            _, _, _, preds = forward_batch(audio, video, params, mode="free_running")
        mask = targets != SENTINEL
        err = np.abs(preds - targets)[mask]
        correct += int((err == 0).sum())
        total += int(mask.sum())
        abs_err_sum += float(err.sum())
        if err.size:
            max_err = max(max_err, int(err.max()))
    return {
        "top1": correct / max(total, 1),
        "mean_shift_error": abs_err_sum / max(total, 1),
        "max_shift_error": max_err,
    }


def _val_loss(params: ModelParams, examples) -> float:
    audio, video, targets = _gather(examples)
    loss, n_terms, _, _ = forward_batch(audio, video, params, mode="teacher_forced",
                                        targets=targets)
    return float(loss.data) if loss is not None else float("nan")


def run_phase(params: ModelParams, get_example, indices, epochs: int, phase: str,
              settings: TrainSettings, val_examples=None, log_rows=None,
              checkpoint_fn=None, optimizer: ad.Adam | None = None,
              start_epoch: int = 0) -> ad.Adam:
    """One training phase: teacher-forced cross-entropy with Adam.

    All per-epoch randomness is derived from (seed, phase, epoch), so a
    run resumed at any epoch boundary reproduces the uninterrupted one.
    """
    if len(indices) == 0:
        raise ValueError("empty training split")
    opt = optimizer or ad.Adam(params.tensors, lr=settings.lr,
                               beta1=settings.beta1, beta2=settings.beta2)
    indices = np.asarray(list(indices))
    for epoch in range(start_epoch, epochs):
        order_rng = rng_for(settings.seed, phase, "order", epoch)
        drop_rng = rng_for(settings.seed, phase, "dropout", epoch)
        jitter_rng = rng_for(settings.seed, phase, "jitter", epoch)
        feedback_rng = rng_for(settings.seed, phase, "feedback", epoch)
        perm = order_rng.permutation(indices)
        epoch_loss, n_batches = 0.0, 0
        for lo in range(0, len(perm), settings.batch_size):
            examples = [get_example(int(i)) for i in perm[lo:lo + settings.batch_size]]
            audio, video, targets = _gather(examples)
            if phase == "phase2" and settings.jitter_sigma > 0:
                video = video + jitter_rng.normal(scale=settings.jitter_sigma,
                                                  size=video.shape)
            loss, n_terms, _, _ = forward_batch(audio, video, params,
                                                mode="teacher_forced", targets=targets,
                                                training=True, dropout_rng=drop_rng,
                                                self_feedback_p=settings.self_feedback_p,
                                                feedback_rng=feedback_rng)
            if loss is None:
                continue
            if not np.isfinite(loss.data):
                raise FloatingPointError(f"non-finite loss at {phase} epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += float(loss.data)
            n_batches += 1
        row = {"epoch": epoch, "phase": phase,
               "train_loss": epoch_loss / max(n_batches, 1),
               "val_loss": "", "val_top1": ""}
        if val_examples:
            row["val_loss"] = _val_loss(params, val_examples)
            row["val_top1"] = evaluate_model(params, val_examples)["top1"]
        if log_rows is not None:
            log_rows.append(row)
        if checkpoint_fn is not None:
            checkpoint_fn(phase, epoch, opt.step_count)
    return opt


def contrastive_loss(audio, video, targets, params: ModelParams):
    """Cross-entropy over softmax(-distance) rows against the true indices.

    Trains only the modality encoders: each audio frame's distance row
    is treated as negative logits over the video window, so matching
    frames are pulled together and mismatches pushed apart. Sentinel
    targets are masked. Returns (loss Tensor or None, n_terms).
    """
    cfg = params.config
    psi_q, psi_k = encode_inputs_batch(ad.constant(audio), ad.constant(video), params)
    rho = ad.pairwise_distance(psi_q, psi_k)
    logits = ad.reshape(ad.scale(rho, -1.0), (-1, cfg.m))
    flat_targets = np.asarray(targets).reshape(-1)
    mask = flat_targets != SENTINEL
    if not mask.any():
        return None, 0
    loss = ad.cross_entropy_sum(logits, np.where(mask, flat_targets, 0), mask)
    n_terms = int(mask.sum())
    return ad.scale(loss, 1.0 / n_terms), n_terms


def run_contrastive_phase(params: ModelParams, get_example, indices, epochs: int,
                          phase: str, settings: TrainSettings, val_examples=None,
                          log_rows=None, checkpoint_fn=None,
                          optimizer: ad.Adam | None = None,
                          start_epoch: int = 0) -> ad.Adam:
    """Encoder-only pretraining epoch loop (same logging/checkpoint shape)."""
    if len(indices) == 0:
        raise ValueError("empty training split")
    opt = optimizer or ad.Adam(params.tensors, lr=settings.lr,
                               beta1=settings.beta1, beta2=settings.beta2)
    indices = np.asarray(list(indices))
    for epoch in range(start_epoch, epochs):
        order_rng = rng_for(settings.seed, phase, "order", epoch)
        perm = order_rng.permutation(indices)
        epoch_loss, n_batches = 0.0, 0
        for lo in range(0, len(perm), settings.batch_size):
            examples = [get_example(int(i)) for i in perm[lo:lo + settings.batch_size]]
            audio, video, targets = _gather(examples)
            loss, n_terms = contrastive_loss(audio, video, targets, params)
            if loss is None:
                continue
            if not np.isfinite(loss.data):
                raise FloatingPointError(f"non-finite loss at {phase} epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += float(loss.data)
            n_batches += 1
        row = {"epoch": epoch, "phase": phase,
               "train_loss": epoch_loss / max(n_batches, 1),
               "val_loss": "", "val_top1": ""}
        if val_examples:
            row["val_loss"] = _val_loss(params, val_examples)
            row["val_top1"] = evaluate_model(params, val_examples)["top1"]
        if log_rows is not None:
            log_rows.append(row)
        if checkpoint_fn is not None:
            checkpoint_fn(phase, epoch, opt.step_count)
    return opt


def train_phase1(dataset, params: ModelParams, settings: TrainSettings,
                 val_examples=None, log_rows=None, checkpoint_fn=None,
                 optimizer=None, start_epoch: int = 0) -> ModelParams:
    """Pretrain on shift-only examples (no drop/duplicate edits).

    With settings.phase1_contrastive (the default) only the encoders
    train, against softmax(-distance); otherwise the full decoding
    pipeline loss is used.
    """
    if settings.phase1_epochs > start_epoch:
        runner = run_contrastive_phase if settings.phase1_contrastive else run_phase
        runner(params, _ExampleCache(dataset, shift_only=True),
               dataset.split_indices("train"), settings.phase1_epochs, "phase1",
               settings, val_examples=val_examples, log_rows=log_rows,
               checkpoint_fn=checkpoint_fn, optimizer=optimizer,
               start_epoch=start_epoch)
    return params


def reset_non_encoder_params(params: ModelParams, rng: np.random.Generator) -> None:
    """Reinitialize everything except the modality encoders in place."""
    fresh = init_params(params.config, rng)
    for name, tensor in params.tensors.items():
        if not name.startswith("enc_"):
            tensor.data = fresh[name].data


def train_phase2(dataset, params: ModelParams, settings: TrainSettings,
                 val_examples=None, log_rows=None, checkpoint_fn=None,
                 optimizer=None, start_epoch: int = 0) -> ModelParams:
    """Train the full model on edited + shifted examples."""
    if settings.phase2_epochs > start_epoch:
        run_phase(params, _ExampleCache(dataset, shift_only=False),
                  dataset.split_indices("train"), settings.phase2_epochs, "phase2",
                  settings, val_examples=val_examples, log_rows=log_rows,
                  checkpoint_fn=checkpoint_fn, optimizer=optimizer,
                  start_epoch=start_epoch)
    return params


def write_training_log(rows, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["epoch", "phase", "train_loss",
                                               "val_loss", "val_top1"])
        writer.writeheader()
        writer.writerows(rows)
