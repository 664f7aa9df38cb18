"""Utterance container and the JSON-lines corpus format.

One utterance per line: {"id", "features", "words", "transcript"} with word
spans expressed in encoder frames. Reading a file and writing it back is
byte-identical (python float repr round-trips IEEE doubles exactly).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .alignment import WordSpan, build_frame_alignment, collapse
from .errors import ShapeError


@dataclass
class Utterance:
    utt_id: str
    features: np.ndarray  # raw (N, d) frames, before stacking
    words: list[WordSpan]
    transcript: list[int]

    def num_raw_frames(self) -> int:
        return self.features.shape[0]

    def encoder_frames(self, stride: int) -> int:
        return -(-self.features.shape[0] // stride)

    def frame_alignment(self, stride: int, space_id: int):
        return build_frame_alignment(self.words, self.encoder_frames(stride), space_id)


def utterance_to_json(utt: Utterance) -> str:
    record = {
        "id": utt.utt_id,
        "features": [[float(v) for v in row] for row in utt.features],
        "words": [
            {"word": w.word, "pieces": list(w.pieces), "start": w.start_frame, "end": w.end_frame}
            for w in utt.words
        ],
        "transcript": list(utt.transcript),
    }
    return json.dumps(record, separators=(",", ":"))


def utterance_from_json(line: str) -> Utterance:
    record = json.loads(line)
    return Utterance(
        utt_id=record["id"],
        features=np.asarray(record["features"], dtype=np.float64),
        words=[
            WordSpan(word=w["word"], pieces=list(w["pieces"]),
                     start_frame=w["start"], end_frame=w["end"])
            for w in record["words"]
        ],
        transcript=list(record["transcript"]),
    )


def save_corpus(path, utterances: list[Utterance]) -> None:
    with open(path, "w") as fh:
        for utt in utterances:
            fh.write(utterance_to_json(utt))
            fh.write("\n")


def load_corpus(path) -> list[Utterance]:
    with open(path) as fh:
        return [utterance_from_json(line) for line in fh if line.strip()]


def corpus_hash(utterances: list[Utterance]) -> str:
    digest = hashlib.sha256()
    for utt in utterances:
        digest.update(utterance_to_json(utt).encode())
        digest.update(b"\n")
    return digest.hexdigest()[:16]


def piece_word_map(utt: Utterance) -> list[int | None]:
    """For each transcript position, the index of the word it belongs to
    (None for space tokens). Requires the transcript to spell the words in
    order, which generated corpora guarantee."""
    mapping: list[int | None] = []
    pos = 0
    for w_idx, span in enumerate(utt.words):
        word_tokens = collapse(span.pieces)
        # gaps collapse to a single space token, so at most one sits between words
        if pos < len(utt.transcript) and utt.transcript[pos] != word_tokens[0]:
            mapping.append(None)
            pos += 1
        if utt.transcript[pos : pos + len(word_tokens)] != word_tokens:
            raise ShapeError(f"utterance {utt.utt_id}: transcript does not spell word "
                             f"'{span.word}' at position {pos}")
        mapping.extend([w_idx] * len(word_tokens))
        pos += len(word_tokens)
    mapping.extend([None] * (len(utt.transcript) - pos))
    return mapping
