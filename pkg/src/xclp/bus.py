"""In-process message bus with per-party transcripts.

Messages are serialized into envelopes on send and parsed back on delivery,
so nothing crosses a party boundary except bytes.  Each party keeps an
append-only transcript (envelope header, payload digest and size) that the
privacy and communication checks inspect after a run.
"""

from __future__ import annotations

import hashlib
import struct
import threading
from collections import defaultdict, deque
from dataclasses import dataclass, field

import numpy as np

SERVER = "server"


class PartyDropout(RuntimeError):
    """A party became unreachable; ``party`` names it."""

    def __init__(self, party: str, where: str = "") -> None:
        super().__init__(f"party {party} dropped out" + (f" ({where})" if where else ""))
        self.party = party


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<H", len(b)) + b


def _unpack_str(data: bytes, pos: int) -> tuple[str, int]:
    (ln,) = struct.unpack_from("<H", data, pos)
    pos += 2
    return data[pos : pos + ln].decode("utf-8"), pos + ln


@dataclass(frozen=True)
class Envelope:
    round_id: str
    sender: str
    recipient: str
    kind: str
    payload: bytes
    elements: int = 0  # protocol-level element count used for cost accounting

    @property
    def byte_len(self) -> int:
        return len(self.payload)

    def to_bytes(self) -> bytes:
        head = b"".join(_pack_str(s) for s in (self.round_id, self.sender, self.recipient, self.kind))
        return head + struct.pack("<QQ", self.elements, self.byte_len) + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> Envelope:
        pos = 0
        fields = []
        for _ in range(4):
            s, pos = _unpack_str(data, pos)
            fields.append(s)
        elements, byte_len = struct.unpack_from("<QQ", data, pos)
        pos += 16
        payload = data[pos : pos + byte_len]
        if len(payload) != byte_len:
            raise ValueError("truncated envelope")
        return cls(*fields, payload=payload, elements=elements)


@dataclass(frozen=True)
class TranscriptEntry:
    phase: str
    direction: str  # "sent" | "recv"
    round_id: str
    sender: str
    recipient: str
    kind: str
    byte_len: int
    elements: int
    digest: str
    payload: bytes | None = None


@dataclass
class PartyTranscript:
    party_id: str
    entries: list[TranscriptEntry] = field(default_factory=list)
    phases: list[str] = field(default_factory=list)

    def sent(self, kind: str | None = None, phase: str | None = None) -> list[TranscriptEntry]:
        return [
            e
            for e in self.entries
            if e.direction == "sent" and (kind is None or e.kind == kind) and (phase is None or e.phase == phase)
        ]

    def received(self, kind: str | None = None, phase: str | None = None) -> list[TranscriptEntry]:
        return [
            e
            for e in self.entries
            if e.direction == "recv" and (kind is None or e.kind == kind) and (phase is None or e.phase == phase)
        ]

    def bytes_by_phase(self) -> dict[str, dict[str, int]]:
        out: dict[str, dict[str, int]] = {}
        for e in self.entries:
            slot = out.setdefault(e.phase, {"sent": 0, "recv": 0})
            slot[e.direction] += e.byte_len
        return out

    def digest(self) -> str:
        """Hash over the whole ordered log, for determinism checks."""
        h = hashlib.sha256()
        for e in self.entries:
            h.update(
                f"{e.phase}|{e.direction}|{e.round_id}|{e.sender}|{e.recipient}|{e.kind}|{e.byte_len}|{e.elements}|{e.digest}\n".encode()
            )
        return h.hexdigest()


class MessageBus:
    """Mailboxes keyed by recipient; FIFO per (sender, kind, round_id)."""

    def __init__(self, keep_payloads: bool = False) -> None:
        self.keep_payloads = keep_payloads
        self.phase = "setup"
        self.transcripts: dict[str, PartyTranscript] = {}
        self.dropped: set[str] = set()
        self._boxes: dict[str, dict[tuple[str, str, str], deque[bytes]]] = defaultdict(lambda: defaultdict(deque))
        self._lock = threading.RLock()

    def transcript(self, party: str) -> PartyTranscript:
        with self._lock:
            if party not in self.transcripts:
                self.transcripts[party] = PartyTranscript(party)
            return self.transcripts[party]

    def mark_phase(self, phase: str) -> None:
        with self._lock:
            self.phase = phase
            for t in self.transcripts.values():
                t.phases.append(phase)

    def drop(self, party: str) -> None:
        with self._lock:
            self.dropped.add(party)
            self._boxes.pop(party, None)

    def check(self, party: str, where: str = "") -> None:
        if party in self.dropped:
            raise PartyDropout(party, where)

    def _log(self, party: str, direction: str, env: Envelope, digest: str, visible: bool = True) -> None:
        self.transcript(party).entries.append(
            TranscriptEntry(
                self.phase,
                direction,
                env.round_id,
                env.sender,
                env.recipient,
                env.kind,
                env.byte_len,
                env.elements,
                digest,
                env.payload if self.keep_payloads and visible else None,
            )
        )

    def send(
        self,
        round_id: str,
        sender: str,
        recipient: str,
        kind: str,
        payload,
        elements: int = 0,
        redact_sender: bool = False,
    ) -> Envelope:
        """Queue a message; ``redact_sender`` keeps the payload out of the sender's log.

        Redaction models a trusted exchange (simulated OT) whose output the
        sender must not see; the byte count is still recorded.
        """
        if isinstance(payload, np.ndarray):
            payload = payload.tobytes()
        env = Envelope(round_id, sender, recipient, kind, bytes(payload), int(elements))
        with self._lock:
            self.check(sender, f"sending {kind}")
            self.check(recipient, f"receiving {kind}")
            if redact_sender:
                self._log(sender, "sent", env, "redacted", visible=False)
            else:
                self._log(sender, "sent", env, hashlib.sha256(env.payload).hexdigest())
            self._boxes[recipient][(sender, kind, round_id)].append(env.to_bytes())
        return env

    def receive(self, recipient: str, sender: str, kind: str, round_id: str) -> Envelope:
        with self._lock:
            self.check(recipient, f"receiving {kind}")
            box = self._boxes[recipient][(sender, kind, round_id)]
            if not box:
                self.check(sender, f"awaiting {kind}")
                raise LookupError(f"no {kind} message from {sender} for {recipient}")
            env = Envelope.from_bytes(box.popleft())
            self._log(recipient, "recv", env, hashlib.sha256(env.payload).hexdigest())
            return env

    def pending(self) -> int:
        with self._lock:
            return sum(len(q) for box in self._boxes.values() for q in box.values())

    def entries(self) -> list[TranscriptEntry]:
        """All sent-side entries across parties (each message counted once)."""
        return [e for t in self.transcripts.values() for e in t.entries if e.direction == "sent"]
