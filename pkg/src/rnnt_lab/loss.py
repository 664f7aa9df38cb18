"""Training objectives: transducer marginal log-loss, CTC, frame-level CE,
masked 3-D CE over label tensors, and next-token CE for the prediction
network. Every loss returns its value, the exact analytic gradient w.r.t.
the input logits, and a taped scalar node so gradients flow on into model
parameters. The enumeration oracles stay deliberately independent of the
dynamic programs they check.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .errors import NumericsError, ShapeError
from .numerics import NEG_INF, Tensor


@dataclass
class LossOutput:
    value: float
    grad_logits: Tensor
    node: Tensor  # taped scalar; Tape.backward(node) pushes grads into the model


@dataclass
class LogLattice:
    """Forward/backward log variables over the (T, U+1) decoding lattice."""

    alpha: Tensor
    beta: Tensor
    log_probs: Tensor

    def log_likelihood(self) -> float:
        return float(self.beta.data[0, 0])


def _stable_log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _as_array(logits) -> np.ndarray:
    return logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)


def _check_targets(targets, blank: int, num_classes: int) -> list[int]:
    targets = [int(y) for y in targets]
    for y in targets:
        if y == blank:
            raise ShapeError(f"targets must not contain the blank class {blank}")
        if not (0 <= y < num_classes):
            raise ShapeError(f"target id {y} outside {num_classes} classes")
    return targets


# ---------------------------------------------------------------------------
# transducer loss
# ---------------------------------------------------------------------------


def rnnt_lattice(logits, targets, blank: int) -> LogLattice:
    """Run the forward-backward recursions; alpha[0,0] == 0, beta[0,0] == log P(y|x)."""
    z = _as_array(logits)
    if z.ndim != 3:
        raise ShapeError(f"rnnt: logits must be (T, U+1, K+1), got shape {z.shape}")
    t_len, u_rows, num_classes = z.shape
    targets = _check_targets(targets, blank, num_classes)
    u_len = len(targets)
    if t_len < 1:
        raise ShapeError("rnnt: need at least one frame")
    if u_rows != u_len + 1:
        raise ShapeError(f"rnnt: logits have {u_rows} label rows but targets need {u_len + 1}")

    lp = _stable_log_softmax(z)

    alpha = np.full((t_len, u_len + 1), NEG_INF)
    alpha[0, 0] = 0.0
    for t in range(1, t_len):
        alpha[t, 0] = alpha[t - 1, 0] + lp[t - 1, 0, blank]
    for u in range(1, u_len + 1):
        alpha[0, u] = alpha[0, u - 1] + lp[0, u - 1, targets[u - 1]]
    for t in range(1, t_len):
        for u in range(1, u_len + 1):
            alpha[t, u] = np.logaddexp(
                alpha[t - 1, u] + lp[t - 1, u, blank],
                alpha[t, u - 1] + lp[t, u - 1, targets[u - 1]],
            )

    beta = np.full((t_len, u_len + 1), NEG_INF)
    beta[t_len - 1, u_len] = lp[t_len - 1, u_len, blank]
    for t in range(t_len - 2, -1, -1):
        beta[t, u_len] = lp[t, u_len, blank] + beta[t + 1, u_len]
    for u in range(u_len - 1, -1, -1):
        beta[t_len - 1, u] = lp[t_len - 1, u, targets[u]] + beta[t_len - 1, u + 1]
    for t in range(t_len - 2, -1, -1):
        for u in range(u_len - 1, -1, -1):
            beta[t, u] = np.logaddexp(
                lp[t, u, blank] + beta[t + 1, u],
                lp[t, u, targets[u]] + beta[t, u + 1],
            )

    return LogLattice(alpha=Tensor(alpha), beta=Tensor(beta), log_probs=Tensor(lp))


def rnnt_loss(logits, targets, blank: int) -> LossOutput:
    """Negative log marginal probability of the target sequence, with the
    exact gradient from forward/backward transition occupancies."""
    lattice = rnnt_lattice(logits, targets, blank)
    lp = lattice.log_probs.data
    alpha = lattice.alpha.data
    beta = lattice.beta.data
    t_len, u_rows, _ = lp.shape
    u_len = u_rows - 1
    targets = [int(y) for y in targets]

    loglik = lattice.log_likelihood()
    if not math.isfinite(loglik):
        raise NumericsError(f"rnnt: non-finite log-likelihood {loglik}")

    # suffix mass after a blank step: beta one frame later, or exactly 1 at the terminal
    after_blank = np.full((t_len, u_rows), NEG_INF)
    after_blank[: t_len - 1, :] = beta[1:, :]
    after_blank[t_len - 1, u_len] = 0.0
    occ_blank = np.exp(alpha + lp[:, :, blank] + after_blank - loglik)

    grad_lp = np.zeros_like(lp)
    grad_lp[:, :, blank] -= occ_blank
    if u_len:
        cols = np.arange(u_len)
        lab = np.array(targets)
        lp_lab = lp[:, cols, lab]
        occ_lab = np.exp(alpha[:, :u_len] + lp_lab + beta[:, 1:] - loglik)
        grad_lp[:, cols, lab] -= occ_lab

    grad_z = grad_lp - np.exp(lp) * grad_lp.sum(axis=-1, keepdims=True)
    value = -loglik
    node = (
        nm.record_scalar_loss("rnnt_loss", logits, value, grad_z)
        if isinstance(logits, Tensor)
        else Tensor(np.array([value]))
    )
    return LossOutput(value=value, grad_logits=Tensor(grad_z), node=node)


def rnnt_brute_force(logits, targets, blank: int, max_steps: int = 14) -> float:
    """Enumerate every monotonic interleaving of T blanks and U labels that
    ends in the terminal blank; -log of the summed path probabilities."""
    z = _as_array(logits)
    t_len, u_rows, num_classes = z.shape
    targets = _check_targets(targets, blank, num_classes)
    u_len = len(targets)
    if u_rows != u_len + 1:
        raise ShapeError(f"rnnt_brute_force: {u_rows} label rows vs {u_len} targets")
    if t_len + u_len > max_steps:
        raise ShapeError(f"rnnt_brute_force: T+U = {t_len + u_len} exceeds bound {max_steps}")

    lp = _stable_log_softmax(z)
    path_logps = []
    # choose which of the first T+U-1 steps are label emissions; the last step is blank
    for label_steps in itertools.combinations(range(t_len + u_len - 1), u_len):
        label_set = set(label_steps)
        t = u = 0
        logp = 0.0
        for step in range(t_len + u_len):
            if step in label_set:
                logp += lp[t, u, targets[u]]
                u += 1
            else:
                logp += lp[t, u, blank]
                t += 1
        path_logps.append(logp)
    return -nm.logsumexp(path_logps)


# ---------------------------------------------------------------------------
# CTC loss
# ---------------------------------------------------------------------------


def _ctc_min_frames(targets: list[int]) -> int:
    repeats = sum(1 for a, b in zip(targets, targets[1:]) if a == b)
    return len(targets) + repeats


def ctc_loss(logits, targets, blank: int) -> LossOutput:
    """Standard CTC over the blank-interleaved expanded label sequence."""
    z = _as_array(logits)
    if z.ndim != 2:
        raise ShapeError(f"ctc: logits must be (T, K+1), got shape {z.shape}")
    t_len, num_classes = z.shape
    targets = _check_targets(targets, blank, num_classes)
    need = _ctc_min_frames(targets)
    if t_len < need:
        raise ShapeError(f"ctc: {t_len} frames but targets require at least {need}")

    ext = [blank]
    for y in targets:
        ext += [y, blank]
    s_len = len(ext)
    lp = _stable_log_softmax(z)

    def can_skip(s: int) -> bool:
        return s >= 2 and ext[s] != blank and ext[s] != ext[s - 2]

    alpha = np.full((t_len, s_len), NEG_INF)
    alpha[0, 0] = lp[0, ext[0]]
    if s_len > 1:
        alpha[0, 1] = lp[0, ext[1]]
    for t in range(1, t_len):
        for s in range(s_len):
            acc = alpha[t - 1, s]
            if s >= 1:
                acc = np.logaddexp(acc, alpha[t - 1, s - 1])
            if can_skip(s):
                acc = np.logaddexp(acc, alpha[t - 1, s - 2])
            alpha[t, s] = acc + lp[t, ext[s]]

    beta = np.full((t_len, s_len), NEG_INF)
    beta[t_len - 1, s_len - 1] = lp[t_len - 1, ext[s_len - 1]]
    if s_len > 1:
        beta[t_len - 1, s_len - 2] = lp[t_len - 1, ext[s_len - 2]]
    for t in range(t_len - 2, -1, -1):
        for s in range(s_len - 1, -1, -1):
            acc = beta[t + 1, s]
            if s + 1 < s_len:
                acc = np.logaddexp(acc, beta[t + 1, s + 1])
            if s + 2 < s_len and can_skip(s + 2):
                acc = np.logaddexp(acc, beta[t + 1, s + 2])
            beta[t, s] = acc + lp[t, ext[s]]

    loglik = alpha[t_len - 1, s_len - 1]
    if s_len > 1:
        loglik = np.logaddexp(loglik, alpha[t_len - 1, s_len - 2])
    loglik = float(loglik)
    if not math.isfinite(loglik):
        raise NumericsError(f"ctc: non-finite log-likelihood {loglik}")

    # occupancy of expanded state s at frame t; alpha and beta both carry the
    # emission at (t, s), so divide it out once
    gamma = np.exp(alpha + beta - lp[:, ext] - loglik)
    grad_lp = np.zeros_like(lp)
    for s, k in enumerate(ext):
        grad_lp[:, k] -= gamma[:, s]
    grad_z = grad_lp - np.exp(lp) * grad_lp.sum(axis=-1, keepdims=True)

    value = -loglik
    node = (
        nm.record_scalar_loss("ctc_loss", logits, value, grad_z)
        if isinstance(logits, Tensor)
        else Tensor(np.array([value]))
    )
    return LossOutput(value=value, grad_logits=Tensor(grad_z), node=node)


def ctc_brute_force(logits, targets, blank: int, max_paths: int = 200_000) -> float:
    """Sum over all (K+1)^T frame labelings whose collapse equals the targets."""
    z = _as_array(logits)
    t_len, num_classes = z.shape
    targets = [int(y) for y in targets]
    if num_classes**t_len > max_paths:
        raise ShapeError(f"ctc_brute_force: {num_classes}^{t_len} paths exceed bound {max_paths}")
    lp = _stable_log_softmax(z)
    path_logps = []
    for path in itertools.product(range(num_classes), repeat=t_len):
        collapsed = [k for i, k in enumerate(path) if (i == 0 or k != path[i - 1])]
        collapsed = [k for k in collapsed if k != blank]
        if collapsed == targets:
            path_logps.append(sum(lp[t, k] for t, k in enumerate(path)))
    if not path_logps:
        raise NumericsError("ctc_brute_force: no valid path (T too short for targets)")
    return -nm.logsumexp(path_logps)


# ---------------------------------------------------------------------------
# cross-entropy losses
# ---------------------------------------------------------------------------


def frame_ce_loss(enc_out: Tensor, fc, frame_targets) -> LossOutput:
    """Per-frame token classification on top of the encoder, averaged over frames."""
    frame_targets = [int(k) for k in frame_targets]
    if len(frame_targets) != enc_out.shape[0]:
        raise ShapeError(
            f"frame_ce: {enc_out.shape[0]} frames but {len(frame_targets)} targets")
    logits = fc.apply(enc_out)
    t_len, num_classes = logits.shape
    for k in frame_targets:
        if not (0 <= k < num_classes):
            raise ShapeError(f"frame_ce: target {k} outside {num_classes} classes")
    lp = _stable_log_softmax(logits.data)
    idx = np.arange(t_len)
    tgt = np.array(frame_targets)
    value = float(-lp[idx, tgt].mean())
    grad = np.exp(lp)
    grad[idx, tgt] -= 1.0
    grad /= t_len
    node = nm.record_scalar_loss("frame_ce_loss", logits, value, grad)
    return LossOutput(value=value, grad_logits=Tensor(grad), node=node)


def masked_ce_3d(logits: Tensor, label) -> LossOutput:
    """Mean cross entropy over the masked (gray) cells of a label tensor;
    unmasked cells get exactly zero gradient."""
    targets = label.targets.data if isinstance(label.targets, Tensor) else np.asarray(label.targets)
    mask = np.asarray(label.mask, dtype=bool)
    if logits.shape != targets.shape:
        raise ShapeError(f"masked_ce: logits {logits.shape} vs label tensor {targets.shape}")
    if mask.shape != logits.shape[:2]:
        raise ShapeError(f"masked_ce: mask {mask.shape} vs lattice {logits.shape[:2]}")
    n_masked = int(mask.sum())
    if n_masked == 0:
        raise ShapeError("masked_ce: empty mask")
    lp = _stable_log_softmax(logits.data)
    cell_ce = -(targets * lp).sum(axis=-1)
    value = float(cell_ce[mask].sum() / n_masked)
    grad = (np.exp(lp) - targets) * mask[:, :, None] / n_masked
    node = nm.record_scalar_loss("masked_ce_3d", logits, value, grad)
    return LossOutput(value=value, grad_logits=Tensor(grad), node=node)


def lm_ce_loss(pred_out: Tensor, fc, targets) -> LossOutput:
    """Next-token CE: row u predicts token u+1, averaged over the U real
    tokens. The final row's continuation is end-of-sequence, which has no
    class in the vocabulary, so that row is excluded from the mean."""
    targets = [int(y) for y in targets]
    u_len = len(targets)
    if u_len < 1:
        raise ShapeError("lm_ce: need at least one target token")
    if pred_out.shape[0] != u_len + 1:
        raise ShapeError(f"lm_ce: {pred_out.shape[0]} rows but {u_len} targets need {u_len + 1}")
    logits = fc.apply(pred_out)
    num_classes = logits.shape[1]
    for y in targets:
        if not (0 <= y < num_classes):
            raise ShapeError(f"lm_ce: target {y} outside {num_classes} classes")
    lp = _stable_log_softmax(logits.data)
    idx = np.arange(u_len)
    tgt = np.array(targets)
    value = float(-lp[idx, tgt].mean())
    grad = np.zeros_like(lp)
    grad[:u_len] = np.exp(lp[:u_len])
    grad[idx, tgt] -= 1.0
    grad[:u_len] /= u_len
    node = nm.record_scalar_loss("lm_ce_loss", logits, value, grad)
    return LossOutput(value=value, grad_logits=Tensor(grad), node=node)
