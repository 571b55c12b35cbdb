"""Miniature EOS-terminated detector and the latency (EOS-suppression) attack.

The detector mimics a pixel-to-sequence object detector at desk scale: an
image of ``n`` features in [0, 1] conditions a tanh recurrent decoder that
emits object descriptions as groups of four coordinate tokens and one class
token, and stops at EOS. Decoding cost is proportional to the number of
emitted tokens, so suppressing EOS inflates inference latency.

Hidden unit 0 is a termination head: it integrates a scene-dependent drive
step by step and is the only unit read by the EOS logit. Its drive and the
EOS bias are fixed at construction so that the reference scene decodes to
a fixed number of objects.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

N_COORD_BINS = 16
N_CLASSES = 2
VOCAB = N_COORD_BINS + N_CLASSES + 2
SOS = VOCAB - 2
EOS = VOCAB - 1
OBJECT_TOKENS = 5  # four box coordinates and one class label

WEIGHTS_MAGIC = b"TDET"
WEIGHTS_VERSION = 1
_HEADER = struct.Struct("<4sHIIH")


class CalibrationError(RuntimeError):
    pass


def _slot_masks() -> np.ndarray:
    """Additive logit masks for each position within an object group."""
    masks = np.full((OBJECT_TOKENS, VOCAB), -np.inf)
    for slot in range(OBJECT_TOKENS - 1):
        masks[slot, :N_COORD_BINS] = 0.0
    masks[OBJECT_TOKENS - 1, N_COORD_BINS:N_COORD_BINS + N_CLASSES] = 0.0
    masks[0, EOS] = 0.0
    return masks


_MASKS = _slot_masks()


@dataclass
class ToyDetector:
    W_in: np.ndarray  # (hidden, n)
    W_rec: np.ndarray  # (hidden, hidden)
    embed: np.ndarray  # (vocab, hidden)
    b_hidden: np.ndarray  # (hidden,)
    W_out: np.ndarray  # (vocab, hidden)
    b_out: np.ndarray  # (vocab,)
    max_len: int = 352

    @property
    def n(self) -> int:
        return self.W_in.shape[1]

    @property
    def hidden(self) -> int:
        return self.W_in.shape[0]

    @property
    def vocab(self) -> int:
        return self.W_out.shape[0]


@dataclass(frozen=True)
class Perturbation:
    delta: np.ndarray
    epsilon: float

    @property
    def linf(self) -> float:
        return float(np.max(np.abs(self.delta))) if self.delta.size else 0.0

    def apply(self, img: np.ndarray) -> np.ndarray:
        return np.clip(img + self.delta, 0.0, 1.0)


@dataclass
class AttackResult:
    perturbation: Perturbation
    benign_count: int
    attacked_count: int
    # Best-so-far loss, one entry for the clean image then one per iteration.
    loss_trace: list[float] = field(default_factory=list)

    @property
    def amplification(self) -> float:
        return self.attacked_count / self.benign_count


def reference_image(seed: int = 123, n: int = 64) -> np.ndarray:
    return np.random.default_rng(seed).uniform(0.0, 1.0, n)


def _check_image(img: np.ndarray, n: int) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    if img.shape != (n,):
        raise ValueError(f"expected image of shape ({n},), got {img.shape}")
    if np.any(img < 0.0) or np.any(img > 1.0) or not np.all(np.isfinite(img)):
        raise ValueError("image features must lie in [0, 1]")
    return img


def _run(d: ToyDetector, x: np.ndarray, keep: bool = False):
    """Greedy decode. Returns tokens and, with ``keep``, the tape for backprop."""
    drive = d.W_in @ x + d.b_hidden
    h = np.zeros(d.hidden)
    tok = SOS
    tokens: list[int] = []
    hs, logits = [], []
    for t in range(d.max_len):
        h = np.tanh(d.W_rec @ h + d.embed[tok] + drive)
        lg = d.W_out @ h + d.b_out
        if keep:
            hs.append(h)
            logits.append(lg)
        tok = int(np.argmax(lg + _MASKS[t % OBJECT_TOKENS]))
        tokens.append(tok)
        if tok == EOS:
            break
    return tokens, hs, logits


def decode(d: ToyDetector, img: np.ndarray) -> tuple[list[int], int]:
    """Greedy autoregressive decode from SOS; ``count`` includes the EOS token."""
    tokens, _, _ = _run(d, _check_image(img, d.n))
    return tokens, len(tokens)


def _eos_logprobs(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    m = logits.max(axis=1, keepdims=True)
    z = np.exp(logits - m)
    probs = z / z.sum(axis=1, keepdims=True)
    logp = logits[:, EOS] - (m[:, 0] + np.log(z.sum(axis=1)))
    return logp, probs


def eos_logprob_loss(d: ToyDetector, img: np.ndarray) -> float:
    """Summed log-probability of EOS along the greedy decode path."""
    _, _, logits = _run(d, _check_image(img, d.n), keep=True)
    logp, _ = _eos_logprobs(np.array(logits))
    return float(logp.sum())


def eos_logprob_loss_and_grad(d: ToyDetector, img: np.ndarray) -> tuple[float, np.ndarray, int]:
    """Loss, its gradient w.r.t. the image, and the decode count.

    The decoded tokens are held fixed (argmax is piecewise constant), and
    the gradient flows through the hidden-state recurrence.
    """
    x = _check_image(img, d.n)
    tokens, hs, logits = _run(d, x, keep=True)
    logits = np.array(logits)
    logp, probs = _eos_logprobs(logits)

    dlogits = -probs
    dlogits[:, EOS] += 1.0
    dh_next = np.zeros(d.hidden)
    ddrive = np.zeros(d.hidden)
    for t in range(len(tokens) - 1, -1, -1):
        dh = d.W_out.T @ dlogits[t] + dh_next
        da = dh * (1.0 - hs[t] ** 2)
        ddrive += da
        dh_next = d.W_rec.T @ da
    return float(logp.sum()), d.W_in.T @ ddrive, len(tokens)


def _boundary_margins(d: ToyDetector, x: np.ndarray, steps: int) -> np.ndarray:
    """EOS logit minus the best competing token at each decode step, with EOS never taken."""
    drive = d.W_in @ x + d.b_hidden
    h = np.zeros(d.hidden)
    tok = SOS
    out = np.empty(steps)
    for t in range(steps):
        h = np.tanh(d.W_rec @ h + d.embed[tok] + drive)
        lg = d.W_out @ h + d.b_out
        masked = lg + _MASKS[t % OBJECT_TOKENS]
        masked[EOS] = -np.inf
        out[t] = lg[EOS] - masked.max()
        tok = int(np.argmax(masked))
    return out


def build_detector(
    seed: int = 0,
    n: int = 64,
    hidden: int = 32,
    reference: np.ndarray | None = None,
    objects: int = 2,
    latency_ratio: float = 32.0,
    term_drive: float = 0.05,
    term_sensitivity: float = 0.06,
    eos_gain: float = 20.0,
) -> ToyDetector:
    """Build a fixed-seed detector that reports ``objects`` objects on the reference scene.

    ``max_len`` is set to ``latency_ratio`` times the benign decode length,
    so a cap-hitting decode costs that multiple of the benign latency.
    """
    if reference is None:
        reference = reference_image(n=n)
    reference = _check_image(reference, n)
    rng = np.random.default_rng(seed)
    W_in = rng.normal(0.0, 1.0 / np.sqrt(n), (hidden, n))
    W_rec = rng.normal(0.0, 0.8 / np.sqrt(hidden), (hidden, hidden))
    embed = rng.normal(0.0, 1.0, (VOCAB, hidden))
    b_hidden = rng.normal(0.0, 0.1, hidden)
    W_out = rng.normal(0.0, 0.5, (VOCAB, hidden))
    b_out = np.zeros(VOCAB)

    # Termination head: a self-exciting integrator isolated from the other units.
    W_rec[0, :] = 0.0
    W_rec[:, 0] = 0.0
    W_rec[0, 0] = 1.0
    embed[:, 0] = 0.0
    W_in[0] = rng.normal(0.0, term_sensitivity, n)
    b_hidden[0] = term_drive - W_in[0] @ reference
    W_out[:, 0] = 0.0
    W_out[EOS, :] = 0.0
    W_out[EOS, 0] = eos_gain
    W_out[SOS, :] = 0.0
    b_out[SOS] = -30.0

    d = ToyDetector(W_in, W_rec, embed, b_hidden, W_out, b_out, max_len=OBJECT_TOKENS * (objects + 2))
    stop = OBJECT_TOKENS * objects
    margins = _boundary_margins(d, reference, stop + 1)
    # Place the EOS threshold midway between the last two group boundaries.
    d.b_out[EOS] = -0.5 * (margins[stop - OBJECT_TOKENS] + margins[stop])
    _, benign = decode(d, reference)
    if benign != stop + 1:
        raise CalibrationError(f"detector seed {seed} decodes {benign} tokens, expected {stop + 1}")
    d.max_len = int(round(latency_ratio * benign))
    return d


def eos_suppression_attack(
    d: ToyDetector,
    img: np.ndarray,
    epsilon: float = 0.03,
    iters: int = 500,
    step: float | None = None,
    stop_at_cap: bool = True,
) -> AttackResult:
    """Sign-gradient descent on the EOS log-likelihood under L-inf and box constraints.

    Returns the best perturbation found, ranked by decode count and then by
    loss, so the attack never shortens the benign decode.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    x = _check_image(img, d.n)
    step = epsilon / 10.0 if step is None else step

    loss, grad, count = eos_logprob_loss_and_grad(d, x)
    benign_count = count
    best_delta, best_key = np.zeros_like(x), (count, -loss)
    trace = [loss]
    if epsilon == 0.0:
        return AttackResult(Perturbation(best_delta, 0.0), benign_count, benign_count, trace)

    delta = np.zeros_like(x)
    for _ in range(iters):
        delta = np.clip(delta - step * np.sign(grad), -epsilon, epsilon)
        delta = np.clip(x + delta, 0.0, 1.0) - x
        loss, grad, count = eos_logprob_loss_and_grad(d, x + delta)
        if (count, -loss) > best_key:
            best_delta, best_key = delta.copy(), (count, -loss)
        trace.append(-best_key[1])
        if stop_at_cap and best_key[0] >= d.max_len:
            break
    return AttackResult(Perturbation(best_delta, epsilon), benign_count, best_key[0], trace)


def calibrate_latency(d: ToyDetector, benign_target: float = 0.1, img: np.ndarray | None = None) -> float:
    """Seconds per decoded token such that the benign decode takes ``benign_target``."""
    if benign_target <= 0:
        raise ValueError("benign_target must be positive")
    img = reference_image(n=d.n) if img is None else img
    _, count = decode(d, img)
    if count == 0:
        raise CalibrationError("benign decode emitted no tokens")
    return benign_target / count


def save_detector(d: ToyDetector, path: str | Path) -> None:
    """Little-endian flat float64 array behind a 16-byte header; max_len is the final element."""
    flat = np.concatenate(
        [d.W_in.ravel(), d.W_rec.ravel(), d.embed.ravel(), d.b_hidden, d.W_out.ravel(), d.b_out, [float(d.max_len)]]
    ).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(WEIGHTS_MAGIC, WEIGHTS_VERSION, d.n, d.hidden, d.vocab))
        fh.write(flat.tobytes())


def load_detector(path: str | Path) -> ToyDetector:
    raw = Path(path).read_bytes()
    magic, version, n, hidden, vocab = _HEADER.unpack_from(raw)
    if magic != WEIGHTS_MAGIC or version != WEIGHTS_VERSION:
        raise ValueError(f"{path}: not a version {WEIGHTS_VERSION} detector weight file")
    flat = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).astype(float)
    sizes = [hidden * n, hidden * hidden, vocab * hidden, hidden, vocab * hidden, vocab, 1]
    if flat.size != sum(sizes):
        raise ValueError(f"{path}: expected {sum(sizes)} parameters, found {flat.size}")
    parts = np.split(flat, np.cumsum(sizes)[:-1])
    return ToyDetector(
        W_in=parts[0].reshape(hidden, n),
        W_rec=parts[1].reshape(hidden, hidden),
        embed=parts[2].reshape(vocab, hidden),
        b_hidden=parts[3],
        W_out=parts[4].reshape(vocab, hidden),
        b_out=parts[5],
        max_len=int(parts[6][0]),
    )


def attack_report(result: AttackResult, per_token_cost: float, **extra) -> dict:
    report = {
        "benign_count": result.benign_count,
        "attacked_count": result.attacked_count,
        "loss_trace": [float(v) for v in result.loss_trace],
        "delta_linf": result.perturbation.linf,
        "epsilon": result.perturbation.epsilon,
        "per_token_cost": per_token_cost,
        "benign_latency": per_token_cost * result.benign_count,
        "attacked_latency": per_token_cost * result.attacked_count,
    }
    report.update(extra)
    return report


def write_attack_report(report: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
