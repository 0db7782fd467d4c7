"""Rated-speech corpora: manifest I/O, splits, pooling, synthetic fixtures.

A corpus is a named set of rated utterances partitioned into train/dev/test
splits. Manifests are plain CSV files (see :func:`load_manifest` for the
row format); corpora are immutable once loaded, and every operation that
involves randomness takes an explicit seed.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ManifestError, ValidationError
from .seeding import named_rng

logger = logging.getLogger(__name__)

MANIFEST_HEADER = [
    "sample_id",
    "audio_path",
    "embedding_path",
    "dataset",
    "system_id",
    "mos",
    "listener_id",
    "listener_score",
]

SPLIT_NAMES = ("train", "dev", "test")

DOMAIN_TAGS = ("synthetic", "non-synthetic")


@dataclass(frozen=True)
class Sample:
    """One rated utterance.

    Exactly one of ``audio_ref``/``embedding_ref`` is set; ``mos`` is the
    authoritative score, and must equal the mean of ``listener_scores``
    when those are present.
    """

    sample_id: str
    audio_ref: Path | None
    embedding_ref: Path | None
    dataset_id: str
    system_id: str | None
    mos: float
    listener_scores: tuple[tuple[str, int], ...] = ()

    def validate(self) -> None:
        if (self.audio_ref is None) == (self.embedding_ref is None):
            raise ValidationError(
                f"sample {self.sample_id!r}: exactly one of audio_path/embedding_path must be set"
            )
        if not 1.0 <= self.mos <= 5.0:
            raise ValidationError(f"sample {self.sample_id!r}: mos {self.mos} outside [1, 5]")
        for listener_id, score in self.listener_scores:
            if not 1 <= score <= 5:
                raise ValidationError(
                    f"sample {self.sample_id!r}: listener {listener_id!r} score {score} outside [1, 5]"
                )
        if self.listener_scores:
            mean = sum(s for _, s in self.listener_scores) / len(self.listener_scores)
            if abs(mean - self.mos) > 1e-6:
                raise ValidationError(
                    f"sample {self.sample_id!r}: mos {self.mos} != listener mean {mean}"
                )


@dataclass(frozen=True)
class CorpusManifest:
    """A named dataset with train/dev/test splits."""

    name: str
    domain_tag: str
    language: str
    native_rate_hz: int
    splits: dict[str, tuple[Sample, ...]] = field(default_factory=dict)

    def validate(self) -> None:
        if self.domain_tag not in DOMAIN_TAGS:
            raise ValidationError(f"unknown domain tag {self.domain_tag!r}")
        seen: set[str] = set()
        for split, samples in self.splits.items():
            if split not in SPLIT_NAMES:
                raise ValidationError(f"unknown split name {split!r}")
            for sample in samples:
                sample.validate()
                if sample.sample_id in seen:
                    raise ValidationError(f"duplicate sample_id {sample.sample_id!r}")
                seen.add(sample.sample_id)

    def samples(self, split: str) -> tuple[Sample, ...]:
        return self.splits.get(split, ())

    def size(self, split: str) -> int:
        return len(self.samples(split))


@dataclass(frozen=True)
class PooledCorpus:
    """Several corpora merged; samples keep their originating dataset_id."""

    members: tuple[CorpusManifest, ...]

    @property
    def name(self) -> str:
        return "+".join(m.name for m in self.members)

    @property
    def domain_tag(self) -> str:
        return "pooled"

    @property
    def dataset_ids(self) -> tuple[str, ...]:
        return tuple(m.name for m in self.members)

    def samples(self, split: str) -> tuple[Sample, ...]:
        out: list[Sample] = []
        for member in self.members:
            out.extend(member.samples(split))
        return tuple(out)

    def size(self, split: str) -> int:
        return len(self.samples(split))


def _resolve(path_text: str, base_dir: Path) -> Path:
    p = Path(path_text)
    return p if p.is_absolute() else base_dir / p


def load_manifest(
    path: str | Path,
    name: str | None = None,
    domain_tag: str = "non-synthetic",
    language: str = "und",
    native_rate_hz: int = 16000,
    split: str = "train",
) -> CorpusManifest:
    """Load one manifest CSV into a corpus with a single split.

    Format: UTF-8 CSV with header
    ``sample_id,audio_path,embedding_path,dataset,system_id,mos,listener_id,listener_score``.
    When a sample has per-listener scores there is one row per
    (sample, listener) and the non-listener columns must agree across its
    rows; otherwise one row per sample with the listener columns empty.
    Relative audio/embedding paths are resolved against the CSV location;
    existence is not checked here (missing files fail at feature time).
    """
    path = Path(path)
    base_dir = path.parent
    rows: dict[str, dict] = {}
    order: list[str] = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError("empty manifest", line=1)
        if header != MANIFEST_HEADER:
            raise ManifestError(f"bad header {header!r}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(MANIFEST_HEADER):
                raise ManifestError(f"expected {len(MANIFEST_HEADER)} fields, got {len(row)}", line=lineno)
            sid, audio, emb, dataset, system, mos_text, lid, lscore = (v.strip() for v in row)
            if not sid:
                raise ManifestError("empty sample_id", line=lineno)
            try:
                mos = float(mos_text)
            except ValueError:
                raise ManifestError(f"unparseable mos {mos_text!r}", line=lineno)
            fields = (audio, emb, dataset, system, mos)
            if sid not in rows:
                rows[sid] = {"fields": fields, "listeners": [], "bare": False}
                order.append(sid)
            else:
                if rows[sid]["fields"] != fields:
                    raise ManifestError(f"conflicting rows for sample {sid!r}", line=lineno)
                if rows[sid]["bare"] or lid == "":
                    # Repeats are only legal as one-row-per-listener fan-out.
                    raise ManifestError(f"duplicate rows for sample {sid!r}", line=lineno)
            if (lid == "") != (lscore == ""):
                raise ManifestError("listener_id and listener_score must both be set or both empty", line=lineno)
            if lid:
                try:
                    score = int(lscore)
                except ValueError:
                    raise ManifestError(f"unparseable listener_score {lscore!r}", line=lineno)
                rows[sid]["listeners"].append((lid, score))
            else:
                rows[sid]["bare"] = True

    samples = []
    for sid in order:
        audio, emb, dataset, system, mos = rows[sid]["fields"]
        sample = Sample(
            sample_id=sid,
            audio_ref=_resolve(audio, base_dir) if audio else None,
            embedding_ref=_resolve(emb, base_dir) if emb else None,
            dataset_id=dataset,
            system_id=system or None,
            mos=mos,
            listener_scores=tuple(rows[sid]["listeners"]),
        )
        samples.append(sample)

    datasets = {s.dataset_id for s in samples}
    if len(datasets) > 1:
        raise ValidationError(f"manifest mixes datasets {sorted(datasets)}")
    if name is None:
        name = samples[0].dataset_id if samples else path.stem
    corpus = CorpusManifest(
        name=name,
        domain_tag=domain_tag,
        language=language,
        native_rate_hz=native_rate_hz,
        splits={split: tuple(samples)},
    )
    corpus.validate()
    logger.info("loaded %d samples from %s", len(samples), path)
    return corpus


def save_manifest(samples: tuple[Sample, ...] | list[Sample], path: str | Path) -> None:
    """Write samples as a manifest CSV; paths are relativized when possible."""
    path = Path(path)
    base_dir = path.parent.resolve()

    def fmt(p: Path | None) -> str:
        if p is None:
            return ""
        p = Path(p)
        try:
            return p.resolve().relative_to(base_dir).as_posix()
        except ValueError:
            return str(p)

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for s in samples:
            common = [s.sample_id, fmt(s.audio_ref), fmt(s.embedding_ref), s.dataset_id, s.system_id or "", repr(s.mos)]
            if s.listener_scores:
                for lid, score in s.listener_scores:
                    writer.writerow(common + [lid, str(score)])
            else:
                writer.writerow(common + ["", ""])


def load_corpus_dir(directory: str | Path) -> CorpusManifest:
    """Load a corpus directory: ``corpus.json`` metadata plus split CSVs."""
    directory = Path(directory)
    meta_path = directory / "corpus.json"
    if not meta_path.exists():
        raise ManifestError(f"no corpus.json in {directory}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    splits: dict[str, tuple[Sample, ...]] = {}
    for split, filename in meta["splits"].items():
        part = load_manifest(
            directory / filename,
            name=meta["name"],
            domain_tag=meta["domain_tag"],
            language=meta.get("language", "und"),
            native_rate_hz=int(meta.get("native_rate_hz", 16000)),
            split=split,
        )
        splits[split] = part.samples(split)
    corpus = CorpusManifest(
        name=meta["name"],
        domain_tag=meta["domain_tag"],
        language=meta.get("language", "und"),
        native_rate_hz=int(meta.get("native_rate_hz", 16000)),
        splits=splits,
    )
    corpus.validate()
    return corpus


def save_corpus_dir(corpus: CorpusManifest, directory: str | Path) -> None:
    """Write a corpus as corpus.json plus one CSV per split."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "name": corpus.name,
        "domain_tag": corpus.domain_tag,
        "language": corpus.language,
        "native_rate_hz": corpus.native_rate_hz,
        "splits": {split: f"{split}.csv" for split in corpus.splits},
    }
    (directory / "corpus.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    for split, samples in corpus.splits.items():
        save_manifest(samples, directory / f"{split}.csv")


def split_random(corpus: CorpusManifest, ratio: float, seed: int) -> CorpusManifest:
    """Partition a train-only corpus into train/dev at the given ratio.

    Train gets ``floor(n * ratio)`` samples (the remainder goes to dev);
    the partition is a pure function of (corpus, seed) and both sides keep
    the original manifest order.
    """
    if set(corpus.splits) != {"train"}:
        raise ValueError("split_random requires a corpus with only a train split")
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    samples = corpus.samples("train")
    n = len(samples)
    n_train = math.floor(n * ratio)
    perm = named_rng(seed, f"split/{corpus.name}").permutation(n)
    train_idx = sorted(perm[:n_train].tolist())
    dev_idx = sorted(perm[n_train:].tolist())
    return replace(
        corpus,
        splits={
            "train": tuple(samples[i] for i in train_idx),
            "dev": tuple(samples[i] for i in dev_idx),
        },
    )


def subsample(corpus: CorpusManifest, n: int, seed: int) -> CorpusManifest:
    """Keep a uniform random subset of n train samples (other splits intact)."""
    samples = corpus.samples("train")
    if n > len(samples):
        raise ValueError(f"cannot subsample {n} from {len(samples)} train samples")
    perm = named_rng(seed, f"subsample/{corpus.name}").permutation(len(samples))
    keep = sorted(perm[:n].tolist())
    splits = dict(corpus.splits)
    splits["train"] = tuple(samples[i] for i in keep)
    return replace(corpus, splits=splits)


def pool(corpora: list[CorpusManifest] | tuple[CorpusManifest, ...]) -> PooledCorpus:
    """Merge corpora into one training pool; corpus names must be unique."""
    if not corpora:
        raise ValueError("pool requires at least one corpus")
    names = [c.name for c in corpora]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate corpus names in pool: {names}")
    return PooledCorpus(members=tuple(corpora))


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a synthetic (tone + white noise) fixture corpus.

    Utterances are sine tones mixed with white noise at SNR levels drawn
    round-robin from ``snr_grid_db``; each SNR level acts as one "system".
    The score is ``clamp(mos_intercept + mos_slope * snr + delta + eps, 1, 5)``
    with ``eps ~ N(0, sigma^2)``; ``delta`` is a per-dataset additive shift
    emulating scale offsets between listening tests.
    """

    name: str
    out_dir: Path
    n_utterances: int = 120
    snr_grid_db: tuple[float, ...] = (-2.0, 0.0, 2.0, 5.0)
    mos_intercept: float = 3.0
    mos_slope: float = 0.4
    delta: float = 0.0
    sigma: float = 0.0
    tone_hz: tuple[float, float] = (200.0, 600.0)
    tone_amplitude: float = 0.25
    duration_s: tuple[float, float] = (1.0, 3.0)
    rate_hz: int = 16000
    split: str = "train"

    def mos_of_snr(self, snr_db: float) -> float:
        return self.mos_intercept + self.mos_slope * snr_db


def generate_synthetic_corpus(spec: SynthSpec, seed: int) -> CorpusManifest:
    """Generate WAVs plus manifest for a synthetic corpus; returns the corpus.

    Writes under ``spec.out_dir``: ``wav/*.wav``, ``<split>.csv``,
    ``corpus.json`` and ``sidecar.csv`` holding the ground-truth
    ``snr_db,delta,epsilon`` per sample for oracle tests. Audio content
    depends only on (spec-sans-delta, seed): shifting ``delta`` changes
    scores, never waveforms.
    """
    from .frontend import write_wav

    if spec.mos_slope <= 0:
        raise ValueError("mos_slope must be positive (monotone SNR->MOS map)")
    if spec.n_utterances < 1:
        raise ValueError("n_utterances must be >= 1")
    out_dir = Path(spec.out_dir)
    wav_dir = out_dir / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)

    rng = named_rng(seed, f"synth/{spec.name}")
    samples: list[Sample] = []
    sidecar_rows: list[tuple[str, float, float, float]] = []
    for i in range(spec.n_utterances):
        snr_db = float(spec.snr_grid_db[i % len(spec.snr_grid_db)])
        duration = rng.uniform(*spec.duration_s)
        tone_hz = rng.uniform(*spec.tone_hz)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        n_samples = int(round(duration * spec.rate_hz))
        t = np.arange(n_samples) / spec.rate_hz
        tone = spec.tone_amplitude * np.sin(2.0 * np.pi * tone_hz * t + phase)
        noise_std = (spec.tone_amplitude / np.sqrt(2.0)) * 10.0 ** (-snr_db / 20.0)
        wave = tone + rng.normal(0.0, noise_std, size=n_samples)
        np.clip(wave, -1.0, 1.0, out=wave)

        eps = float(rng.normal(0.0, spec.sigma)) if spec.sigma > 0 else 0.0
        mos = float(np.clip(spec.mos_of_snr(snr_db) + spec.delta + eps, 1.0, 5.0))

        sample_id = f"{spec.name}-{i:05d}"
        wav_path = wav_dir / f"{sample_id}.wav"
        write_wav(wav_path, wave, spec.rate_hz)
        samples.append(
            Sample(
                sample_id=sample_id,
                audio_ref=wav_path,
                embedding_ref=None,
                dataset_id=spec.name,
                system_id=f"snr{snr_db:+g}",
                mos=mos,
            )
        )
        sidecar_rows.append((sample_id, snr_db, spec.delta, eps))

    corpus = CorpusManifest(
        name=spec.name,
        domain_tag="synthetic",
        language="none",
        native_rate_hz=spec.rate_hz,
        splits={spec.split: tuple(samples)},
    )
    corpus.validate()
    save_corpus_dir(corpus, out_dir)
    with open(out_dir / "sidecar.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "snr_db", "delta", "epsilon"])
        for sid, snr_db, delta, eps in sidecar_rows:
            writer.writerow([sid, repr(snr_db), repr(delta), repr(eps)])
    logger.info("generated synthetic corpus %r: %d utterances in %s", spec.name, len(samples), out_dir)
    return corpus


def load_sidecar(directory: str | Path) -> dict[str, tuple[float, float, float]]:
    """Read a synthetic corpus sidecar: sample_id -> (snr_db, delta, epsilon)."""
    out: dict[str, tuple[float, float, float]] = {}
    with open(Path(directory) / "sidecar.csv", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["sample_id"]] = (float(row["snr_db"]), float(row["delta"]), float(row["epsilon"]))
    return out
