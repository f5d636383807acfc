"""Synthetic negatives for scorer training, forged from trusted samples.

Three constructions, each breaking a different consistency property while
staying on the real feature manifold:

* ``mix``: swap exactly one of the video/audio pathways with an
  opposite-polarity donor from the same batch (coin flip picks which),
  keeping text - breaks cross-modal agreement.
* ``mask``: zero out a Bernoulli subset of dimensions in every pathway -
  mimics degraded or dropped content.
* ``flip``: identical features with the polarity input inverted - breaks
  feature/polarity agreement and is the only family that teaches the scorer
  to read its polarity input at all.

Positives are the trusted samples themselves. Missing audio is represented
by a zero vector throughout, matching how the scorer assembles its input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import FeatureSample
from .util import ValidationError

FAMILIES = ("pos", "mix", "mask", "flip")


@dataclass(frozen=True)
class ForgedItem:
    """One scorer training example: pre-projection features plus a label."""

    h_v: np.ndarray
    h_a: np.ndarray      # zero vector when the source had no audio
    h_t_raw: np.ndarray
    polarity: int
    label: int           # 1 = trusted positive, 0 = forged negative
    family: str
    source_id: str


@dataclass(frozen=True)
class ForgedBatch:
    items: tuple[ForgedItem, ...]

    def by_family(self) -> dict:
        groups = {f: [] for f in FAMILIES}
        for it in self.items:
            groups[it.family].append(it)
        return groups


@dataclass(frozen=True)
class ForgeConfig:
    mask_rate: float = 0.3

    def validate(self) -> None:
        if not 0.0 <= self.mask_rate <= 1.0:
            raise ValidationError("mask_rate must be in [0, 1]")


def audio_or_zero(sample: FeatureSample, d: int) -> np.ndarray:
    return sample.h_a if sample.h_a is not None else np.zeros(d)


def positives(samples, d: int) -> list:
    return [ForgedItem(h_v=s.h_v, h_a=audio_or_zero(s, d), h_t_raw=s.h_t_raw,
                       polarity=s.polarity, label=1, family="pos", source_id=s.id)
            for s in samples]


def mix_negatives(samples, d: int, rng: np.random.Generator) -> list:
    """Pathway swaps against opposite-polarity donors within the batch.

    Samples with no opposite-polarity donor available are skipped, so a
    single-polarity batch yields an empty family rather than an error.
    """
    by_pol = {0: [s for s in samples if s.polarity == 0],
              1: [s for s in samples if s.polarity == 1]}
    out = []
    for s in samples:
        donors = by_pol[1 - s.polarity]
        if not donors:
            continue
        donor = donors[rng.integers(len(donors))]
        keep_video = bool(rng.integers(2))
        if keep_video:
            h_v, h_a = s.h_v, audio_or_zero(donor, d)
        else:
            h_v, h_a = donor.h_v, audio_or_zero(s, d)
        out.append(ForgedItem(h_v=h_v, h_a=h_a, h_t_raw=s.h_t_raw,
                              polarity=s.polarity, label=0, family="mix",
                              source_id=s.id))
    return out


def mask_negatives(samples, d: int, rng: np.random.Generator,
                   mask_rate: float) -> list:
    """Zero a Bernoulli(mask_rate) subset of dims in each pathway.

    Rate 0 is a feature-preserving identity (the items still carry label 0).
    """
    if not 0.0 <= mask_rate <= 1.0:
        raise ValidationError("mask_rate must be in [0, 1]")
    out = []
    for s in samples:
        h_v = s.h_v * (rng.random(d) >= mask_rate)
        h_a = audio_or_zero(s, d) * (rng.random(d) >= mask_rate)
        h_t = s.h_t_raw * (rng.random(s.h_t_raw.shape[0]) >= mask_rate)
        out.append(ForgedItem(h_v=h_v, h_a=h_a, h_t_raw=h_t,
                              polarity=s.polarity, label=0, family="mask",
                              source_id=s.id))
    return out


def flip_negatives(samples, d: int) -> list:
    """Bit-identical features, inverted polarity input."""
    return [ForgedItem(h_v=s.h_v, h_a=audio_or_zero(s, d), h_t_raw=s.h_t_raw,
                       polarity=1 - s.polarity, label=0, family="flip",
                       source_id=s.id)
            for s in samples]


def forge_batch(samples, d: int, rng: np.random.Generator,
                config: ForgeConfig | None = None) -> ForgedBatch:
    """Positives plus one negative per sample per family.

    Draw order is fixed (mix first, then mask), so results are reproducible
    for a given generator state.
    """
    config = config or ForgeConfig()
    config.validate()
    samples = list(samples)
    if not samples:
        raise ValidationError("cannot forge from an empty batch")
    items = positives(samples, d)
    items += mix_negatives(samples, d, rng)
    items += mask_negatives(samples, d, rng, config.mask_rate)
    items += flip_negatives(samples, d)
    return ForgedBatch(items=tuple(items))
