"""
Audio and transcript manifests.

Audio manifest lines: utt_id<TAB>path<TAB>duration_s (relative paths resolve
against the manifest's directory). Transcript lines: utt_id<TAB>text.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Union

from core.errors import ManifestError


@dataclass(frozen=True)
class ManifestEntry:
    utt_id: str
    path: Path
    duration_s: float


class Manifest:
    def __init__(self, entries: Iterable[ManifestEntry], source: Union[str, Path, None] = None):
        self.entries: List[ManifestEntry] = list(entries)
        self.source = Path(source) if source else None
        self._by_id = {}
        for entry in self.entries:
            if entry.utt_id in self._by_id:
                raise ManifestError(f"duplicate utt_id {entry.utt_id!r} in {self.source}")
            self._by_id[entry.utt_id] = entry

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, utt_id: str) -> ManifestEntry:
        return self._by_id[utt_id]

    def __contains__(self, utt_id: str) -> bool:
        return utt_id in self._by_id

    @property
    def utt_ids(self) -> List[str]:
        return [e.utt_id for e in self.entries]

    @property
    def total_seconds(self) -> float:
        return sum(e.duration_s for e in self.entries)

    def validate(self) -> "Manifest":
        """Every referenced audio file must exist"""
        missing = [str(e.path) for e in self.entries if not e.path.exists()]
        if missing:
            preview = ", ".join(missing[:3])
            raise ManifestError(f"{len(missing)} missing audio file(s) in {self.source}: {preview}")
        return self

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Manifest":
        path = Path(path)
        if not path.exists():
            raise ManifestError(f"manifest not found: {path}")
        entries = []
        for lineno, line in enumerate(path.read_text().splitlines(), start=1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ManifestError(f"{path}:{lineno}: expected utt_id<TAB>path<TAB>duration_s")
            utt_id, audio, duration = parts
            audio_path = Path(audio)
            if not audio_path.is_absolute():
                audio_path = path.parent / audio_path
            try:
                entries.append(ManifestEntry(utt_id, audio_path, float(duration)))
            except ValueError:
                raise ManifestError(f"{path}:{lineno}: bad duration {duration!r}")
        return cls(entries, source=path)

    def save(self, path: Union[str, Path]):
        path = Path(path)
        lines = []
        for e in self.entries:
            try:
                audio = e.path.relative_to(path.parent)
            except ValueError:
                audio = e.path
            lines.append(f"{e.utt_id}\t{audio}\t{e.duration_s:.4f}")
        path.write_text("\n".join(lines) + "\n")


def load_transcripts(path: Union[str, Path]) -> Dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"transcript manifest not found: {path}")
    transcripts = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        utt_id, sep, text = line.partition("\t")
        if not sep:
            raise ManifestError(f"{path}:{lineno}: expected utt_id<TAB>text")
        if utt_id in transcripts:
            raise ManifestError(f"duplicate utt_id {utt_id!r} in {path}")
        transcripts[utt_id] = " ".join(text.split())
    return transcripts


def save_transcripts(path: Union[str, Path], transcripts: Dict[str, str]):
    Path(path).write_text("".join(f"{k}\t{v}\n" for k, v in transcripts.items()))
