"""Whole-network label tensors and the pre-training schedules.

Label tensor conventions (T frames, U tokens, rows R = U+1, K+1 classes):

* y1 ("all align"): every row 0..U-1 of frame t holds the one-hot of the
  frame's alignment label; the last row is all blank. Every cell is masked.
* y2 ("correct decoding"): with u(t) the index of the token covering frame t,
  cell (t, u(t)) holds that token and cell (t, u(t)+1) holds blank. Exactly
  those 2T cells are masked. Decoding y2 directly emits each token once at
  its first frame and blanks elsewhere, so the transcript survives decoding;
  the blank-above-token placement is what makes that work, and for the last
  token u(t)+1 = U lands in the terminal row that ends decoding.
* y3 ("align path, short pauses to blank"): only the T token cells of y2 are
  kept, and every frame inside a short pause (space run of < 3 frames) has
  its one-hot replaced by blank, same cell position.

The schedules train in place and report skipped degenerate utterances plus
the per-epoch loss trace; checkpoints stay structurally identical to a fresh
initialization, so any of them can seed main training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import loss as losses
from .alignment import FrameAlignment, collapse, short_pause_spans
from .corpus import Utterance, corpus_hash
from .errors import DegenerateUtterance, ShapeError
from .model import Affine, TransducerModel, stack_frames
from .numerics import Adam, Tape, Tensor


@dataclass
class LabelTensor:
    """One-hot targets over the (T, R) lattice plus the mask of cells used in CE."""

    targets: Tensor  # (T, R, K+1)
    mask: np.ndarray  # bool (T, R)

    def __post_init__(self):
        if not self.mask.any():
            raise ShapeError("LabelTensor: at least one cell must be masked")
        hot = self.targets.data[self.mask]
        if not (np.isin(hot, (0.0, 1.0)).all() and (hot.sum(axis=-1) == 1.0).all()):
            raise ShapeError("LabelTensor: masked cells must be one-hot rows")


def token_frame_index(fa: FrameAlignment, tokens: list[int]) -> list[int]:
    """u(t): the index in ``tokens`` of the token covering each frame.

    Requires the collapsed frame alignment to spell exactly ``tokens``.
    """
    if collapse(fa.labels) != list(tokens):
        raise ShapeError(
            f"frame alignment collapses to {collapse(fa.labels)}, not the tokens {list(tokens)}")
    u_of_t = []
    u = -1
    prev = None
    for label in fa.labels:
        if label != prev:
            u += 1
            prev = label
        u_of_t.append(u)
    return u_of_t


def _one_hot(k: int, num_classes: int) -> np.ndarray:
    row = np.zeros(num_classes)
    row[k] = 1.0
    return row


def build_y1(fa: FrameAlignment, tokens, blank: int, space_id: int | None = None) -> LabelTensor:
    """All rows carry the frame's alignment label; the last row is all blank."""
    tokens = list(tokens)
    t_len = len(fa.labels)
    num_classes = blank + 1
    if t_len < 1:
        raise ShapeError("build_y1: empty frame alignment")
    for label in fa.labels:
        if not (0 <= label < blank):
            raise ShapeError(f"build_y1: frame label {label} outside vocab")
    if tokens and collapse(fa.labels) != tokens:
        raise ShapeError(
            f"build_y1: alignment collapses to {collapse(fa.labels)}, not {tokens}")
    u_len = len(tokens)
    targets = np.zeros((t_len, u_len + 1, num_classes))
    for t, label in enumerate(fa.labels):
        targets[t, :u_len] = _one_hot(label, num_classes)
    targets[:, u_len] = _one_hot(blank, num_classes)
    mask = np.ones((t_len, u_len + 1), dtype=bool)
    return LabelTensor(targets=Tensor(targets), mask=mask)


def build_y2(fa: FrameAlignment, tokens, blank: int, space_id: int | None = None) -> LabelTensor:
    """Token at (t, u(t)), blank inserted directly above at (t, u(t)+1)."""
    tokens = list(tokens)
    u_of_t = token_frame_index(fa, tokens)
    t_len = len(fa.labels)
    num_classes = blank + 1
    targets = np.zeros((t_len, len(tokens) + 1, num_classes))
    mask = np.zeros((t_len, len(tokens) + 1), dtype=bool)
    for t, u in enumerate(u_of_t):
        targets[t, u] = _one_hot(tokens[u], num_classes)
        targets[t, u + 1] = _one_hot(blank, num_classes)
        mask[t, u] = mask[t, u + 1] = True
    return LabelTensor(targets=Tensor(targets), mask=mask)


def build_y3(fa: FrameAlignment, tokens, blank: int, space_id: int | None = None) -> LabelTensor:
    """The token cells of y2 only, with short-pause frames relabeled blank in place."""
    tokens = list(tokens)
    u_of_t = token_frame_index(fa, tokens)
    t_len = len(fa.labels)
    num_classes = blank + 1
    targets = np.zeros((t_len, len(tokens) + 1, num_classes))
    mask = np.zeros((t_len, len(tokens) + 1), dtype=bool)
    for t, u in enumerate(u_of_t):
        targets[t, u] = _one_hot(tokens[u], num_classes)
        mask[t, u] = True
    if space_id is not None:
        for start, end in short_pause_spans(fa, space_id):
            for t in range(start, end):
                targets[t, u_of_t[t]] = _one_hot(blank, num_classes)
    return LabelTensor(targets=Tensor(targets), mask=mask)


LABEL_BUILDERS = {"y1": build_y1, "y2": build_y2, "y3": build_y3}


def label_logits(label: LabelTensor, low: float = -1e9) -> np.ndarray:
    """Read a label tensor as decoder input: masked cells give their one-hot
    as log-probability 0, unmasked cells force blank (the last class)."""
    targets = label.targets.data
    num_classes = targets.shape[-1]
    out = np.full_like(targets, low)
    out[label.mask] = np.where(targets[label.mask] > 0.0, 0.0, low)
    unmasked = ~label.mask
    out[unmasked, num_classes - 1] = 0.0
    return out


# ---------------------------------------------------------------------------
# schedules
# ---------------------------------------------------------------------------


@dataclass
class PretrainReport:
    variant: str
    epochs: int
    corpus_hash: str
    skipped: int
    losses: list[float] = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    @property
    def final_loss(self) -> float | None:
        return self.losses[-1] if self.losses else None

    def manifest(self) -> dict:
        return {
            "variant": self.variant,
            "epochs": self.epochs,
            "corpus_hash": self.corpus_hash,
            "final_loss": self.final_loss,
            "skipped_utterances": self.skipped,
            **self.extras,
        }


def train_with_loss(params, items, loss_fn, *, epochs: int, lr: float = 1e-3,
                    batch_size: int = 8, grad_clip: float = 5.0, seed: int = 0,
                    on_epoch_end=None) -> list[float]:
    """Generic minibatch loop. ``loss_fn(item)`` runs a taped forward pass and
    returns (value, node, weight); gradients are scaled by the batch's total
    weight, clipped by global norm, and stepped with Adam. The per-epoch
    entries are sum(value)/sum(weight) over the whole epoch.
    ``on_epoch_end(epoch, loss)`` runs after each epoch when given."""
    if not items:
        raise ShapeError("train_with_loss: empty item list")
    opt = Adam(params, lr=lr, clip_norm=grad_clip)
    history = []
    for epoch in range(epochs):
        order = np.random.default_rng([seed, 7701, epoch]).permutation(len(items))
        epoch_value = epoch_weight = 0.0
        for start in range(0, len(order), batch_size):
            opt.zero_grad()
            batch_weight = 0.0
            for idx in order[start : start + batch_size]:
                with Tape() as tape:
                    value, node, weight = loss_fn(items[idx])
                    tape.backward(node)
                batch_weight += weight
                epoch_value += value
            epoch_weight += batch_weight
            if batch_weight > 0:
                for p in params:
                    if p.grad is not None:
                        p.grad /= batch_weight
            opt.step()
        history.append(epoch_value / max(epoch_weight, 1e-300))
        if on_epoch_end is not None:
            on_epoch_end(epoch, history[-1])
    return history


def _aligned_items(model: TransducerModel, corpus: list[Utterance], space_id: int):
    """Stacked features plus frame alignment; degenerate utterances dropped."""
    cfg = model.config
    items, skipped = [], 0
    for utt in corpus:
        try:
            fa = utt.frame_alignment(cfg.stack_stride, space_id)
        except DegenerateUtterance:
            skipped += 1
            continue
        stacked = stack_frames(utt.features, cfg.stack_factor, cfg.stack_stride)
        items.append((utt, stacked, fa))
    return items, skipped


def pretrain_encoder_ce(model: TransducerModel, corpus: list[Utterance], *, space_id: int,
                        epochs: int = 10, lr: float = 1e-3, batch_size: int = 8,
                        seed: int = 0) -> PretrainReport:
    """Train the encoder as a per-frame token classifier against the hard
    alignment; the classifier head is freshly seeded and thrown away, only
    the encoder weights transfer."""
    cfg = model.config
    items, skipped = _aligned_items(model, corpus, space_id)
    fc = Affine(cfg.hidden, cfg.num_classes, np.random.default_rng([seed, 0xFC]))
    params = model.encoder_parameters() + fc.parameters()

    def loss_fn(item):
        _, stacked, fa = item
        out = losses.frame_ce_loss(model.encode(stacked), fc, fa.labels)
        return out.value, out.node, 1.0

    history = train_with_loss(params, items, loss_fn, epochs=epochs, lr=lr,
                              batch_size=batch_size, seed=seed)
    hits = total = 0
    for _, stacked, fa in items:
        pred = np.argmax(fc.apply(model.encode(stacked)).data, axis=-1)
        hits += int((pred == np.array(fa.labels)).sum())
        total += len(fa.labels)
    accuracy = hits / total if total else None
    return PretrainReport("enc-ce", epochs, corpus_hash(corpus), skipped, history,
                          extras={"frame_accuracy": accuracy})


def pretrain_encoder_ctc(model: TransducerModel, corpus: list[Utterance], *,
                         epochs: int = 10, lr: float = 1e-3, batch_size: int = 8,
                         seed: int = 0) -> PretrainReport:
    """Train the encoder as a CTC sequence mapper on transcripts (no alignments)."""
    cfg = model.config
    fc = Affine(cfg.hidden, cfg.num_classes, np.random.default_rng([seed, 0xFC]))
    params = model.encoder_parameters() + fc.parameters()
    items = [(utt, stack_frames(utt.features, cfg.stack_factor, cfg.stack_stride))
             for utt in corpus]

    def loss_fn(item):
        utt, stacked = item
        logits = fc.apply(model.encode(stacked))
        out = losses.ctc_loss(logits, utt.transcript, cfg.blank_id)
        return out.value, out.node, max(1.0, float(len(utt.transcript)))

    history = train_with_loss(params, items, loss_fn, epochs=epochs, lr=lr,
                              batch_size=batch_size, seed=seed)
    return PretrainReport("enc-ctc", epochs, corpus_hash(corpus), skipped=0, losses=history)


def pretrain_prediction_lm(model: TransducerModel, corpus: list[Utterance], *,
                           epochs: int = 10, lr: float = 1e-3, batch_size: int = 8,
                           seed: int = 0) -> PretrainReport:
    """Train the prediction network as a next-token language model on transcripts."""
    cfg = model.config
    fc = Affine(cfg.hidden, cfg.num_classes, np.random.default_rng([seed, 0xFC]))
    params = model.prediction_parameters() + fc.parameters()
    items = [utt for utt in corpus if len(utt.transcript) >= 1]

    def loss_fn(utt):
        out = losses.lm_ce_loss(model.predict(utt.transcript), fc, utt.transcript)
        return out.value, out.node, 1.0

    history = train_with_loss(params, items, loss_fn, epochs=epochs, lr=lr,
                              batch_size=batch_size, seed=seed)
    return PretrainReport("lm", epochs, corpus_hash(corpus), skipped=0, losses=history)


def pretrain_whole_network(model: TransducerModel, corpus: list[Utterance], variant: str, *,
                           space_id: int, epochs: int = 10, lr: float = 1e-3,
                           batch_size: int = 8, seed: int = 0) -> PretrainReport:
    """Train encoder, prediction, and joint end to end with masked CE against
    the chosen label tensor; nothing is frozen."""
    if variant not in LABEL_BUILDERS:
        raise ShapeError(f"unknown whole-network variant '{variant}'")
    cfg = model.config
    items, skipped = _aligned_items(model, corpus, space_id)
    params = model.parameters()

    def loss_fn(item):
        utt, stacked, fa = item
        builder = LABEL_BUILDERS[variant]
        label = builder(fa, utt.transcript, cfg.blank_id, space_id)
        logits = model.forward(stacked, utt.transcript)
        out = losses.masked_ce_3d(logits, label)
        return out.value, out.node, 1.0

    history = train_with_loss(params, items, loss_fn, epochs=epochs, lr=lr,
                              batch_size=batch_size, seed=seed)
    return PretrainReport(variant, epochs, corpus_hash(corpus), skipped, history)
