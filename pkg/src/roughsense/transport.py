"""Low-latency UDP framing with a pluggable codec and a reordering jitter buffer.

Wire format (little-endian, one audio buffer per datagram):

    magic     2s   b"RS"
    version   u8   1
    codec_id  u8
    sequence  u32  monotonic, wraps
    timestamp u64  stream position in samples
    channels  u8   2
    flags     u8   reserved, 0
    length    u16  payload byte count
    payload   ...  codec output

The reference codec is lossless passthrough (interleaved little-endian
float32), so the core path is verifiable bit-exactly; lossy codecs plug in
behind the same two-method interface and are never required by the test
suite. Loss concealment is silence insertion: silence reads as no-contact
downstream, which is the least harmful failure for a gate tuned against
false positives.
"""

from __future__ import annotations

import socket
import struct
import time
from dataclasses import dataclass

import numpy as np

from .audio_core import AudioBuffer
from .errors import ConfigError, NetworkError, PacketError

_HEADER = struct.Struct("<2sBBIQBBH")
_MAGIC = b"RS"
_VERSION = 1
MAX_PAYLOAD_BYTES = 65507 - _HEADER.size  # UDP practical datagram limit
SEQ_MOD = 1 << 32


class PassthroughCodec:
    """Lossless reference codec: interleaved little-endian float32."""

    codec_id = 0
    name = "passthrough"

    def encode(self, piezo: np.ndarray, mems: np.ndarray) -> bytes:
        frame = np.empty(2 * len(piezo), dtype="<f4")
        frame[0::2] = piezo
        frame[1::2] = mems
        return frame.tobytes()

    def decode(self, payload: bytes, n_samples: int) -> tuple[np.ndarray, np.ndarray]:
        frame = np.frombuffer(payload, dtype="<f4")
        if len(frame) != 2 * n_samples:
            raise PacketError(
                f"payload holds {len(frame)} samples, expected {2 * n_samples}"
            )
        return frame[0::2].astype(np.float64), frame[1::2].astype(np.float64)


class Lossy8Codec:
    """8-bit quantizing codec; exercises the lossy-conditioning path in tests."""

    codec_id = 1
    name = "lossy8"

    def encode(self, piezo: np.ndarray, mems: np.ndarray) -> bytes:
        frame = np.empty(2 * len(piezo))
        frame[0::2] = piezo
        frame[1::2] = mems
        return np.clip(np.round(frame * 127.0), -127, 127).astype(np.int8).tobytes()

    def decode(self, payload: bytes, n_samples: int) -> tuple[np.ndarray, np.ndarray]:
        frame = np.frombuffer(payload, dtype=np.int8).astype(np.float64) / 127.0
        if len(frame) != 2 * n_samples:
            raise PacketError(
                f"payload holds {len(frame)} samples, expected {2 * n_samples}"
            )
        return frame[0::2], frame[1::2]


CODECS = {c.name: c for c in (PassthroughCodec(), Lossy8Codec())}
CODECS_BY_ID = {c.codec_id: c for c in CODECS.values()}


def get_codec(name: str):
    if name not in CODECS:
        raise ConfigError(f"unknown codec {name!r}; available: {sorted(CODECS)}")
    return CODECS[name]


@dataclass(frozen=True)
class FramePacket:
    codec_id: int
    sequence: int  # u32, wraps
    timestamp_samples: int
    channels: int
    payload: bytes

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(
            _MAGIC,
            _VERSION,
            self.codec_id,
            self.sequence % SEQ_MOD,
            self.timestamp_samples,
            self.channels,
            0,
            len(self.payload),
        )
        return header + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "FramePacket":
        if len(data) < _HEADER.size:
            raise PacketError(f"datagram shorter than header ({len(data)} bytes)")
        magic, version, codec_id, seq, ts, channels, _flags, length = _HEADER.unpack_from(data)
        if magic != _MAGIC:
            raise PacketError("bad magic")
        if version != _VERSION:
            raise PacketError(f"unsupported wire version {version}")
        payload = data[_HEADER.size:]
        if len(payload) != length:
            raise PacketError(f"payload length {len(payload)} != declared {length}")
        return cls(
            codec_id=codec_id,
            sequence=seq,
            timestamp_samples=ts,
            channels=channels,
            payload=payload,
        )


def encode_frame(buf: AudioBuffer, codec, sequence: int) -> FramePacket:
    """Pack one audio buffer into a frame packet."""
    payload = codec.encode(buf.samples_piezo, buf.samples_mems)
    if len(payload) > MAX_PAYLOAD_BYTES:
        raise ConfigError(
            f"encoded payload of {len(payload)} bytes exceeds the "
            f"{MAX_PAYLOAD_BYTES}-byte datagram budget"
        )
    return FramePacket(
        codec_id=codec.codec_id,
        sequence=sequence % SEQ_MOD,
        timestamp_samples=buf.frame_index * len(buf),
        channels=2,
        payload=payload,
    )


def decode_frame(pkt: FramePacket, buffer_samples: int, sample_rate_hz: int) -> AudioBuffer:
    codec = CODECS_BY_ID.get(pkt.codec_id)
    if codec is None:
        raise PacketError(f"unknown codec id {pkt.codec_id}")
    piezo, mems = codec.decode(pkt.payload, buffer_samples)
    return AudioBuffer(
        samples_piezo=piezo,
        samples_mems=mems,
        sample_rate_hz=sample_rate_hz,
        frame_index=pkt.timestamp_samples // buffer_samples,
    )


@dataclass
class TransportStats:
    received: int = 0
    lost: int = 0
    late: int = 0
    duplicated: int = 0
    malformed: int = 0
    resets: int = 0

    def as_line(self) -> str:
        return (
            f"received={self.received} lost={self.lost} late={self.late} "
            f"duplicated={self.duplicated} malformed={self.malformed} resets={self.resets}"
        )


class JitterBuffer:
    """Reorders packets into timestamp order, concealing declared losses.

    Emission starts once `depth` packets are buffered (the depth adds exactly
    depth * buffer-duration to the latency account). A gap is declared lost
    when a pending packet sits more than `reorder_window` positions past it;
    the lost slot is emitted as silence and counted. Duplicates and
    already-played packets are dropped. A sequence discontinuity larger than
    `reset_threshold` is treated as a sender restart: state flushes and the
    stream re-origins.
    """

    def __init__(
        self,
        *,
        depth: int = 2,
        reorder_window: int = 4,
        buffer_samples: int = 512,
        sample_rate_hz: int = 48000,
        reset_threshold: int = 1000,
    ) -> None:
        if depth < 1:
            raise ConfigError("jitter buffer depth must be >= 1")
        self.depth = depth
        self.reorder_window = reorder_window
        self.buffer_samples = buffer_samples
        self.sample_rate_hz = sample_rate_hz
        self.reset_threshold = reset_threshold
        # a run of this many consecutive stale packets also means the sender
        # restarted within the reset_threshold distance
        self.reset_after_late = max(2 * reorder_window, 8)
        self.stats = TransportStats()
        self._pending: dict[int, FramePacket] = {}  # unwrapped seq -> packet
        self._next_emit: int | None = None  # unwrapped
        self._last_unwrapped: int | None = None
        self._concealed: set[int] = set()  # slots emitted as silence
        self._consecutive_stale = 0
        self._started = False

    @property
    def added_latency_s(self) -> float:
        return self.depth * self.buffer_samples / self.sample_rate_hz

    def _unwrap(self, seq: int) -> int:
        if self._last_unwrapped is None:
            return seq
        delta = ((seq - self._last_unwrapped) + SEQ_MOD // 2) % SEQ_MOD - SEQ_MOD // 2
        return self._last_unwrapped + delta

    def _reset(self, seq: int) -> None:
        self._pending.clear()
        self._next_emit = None
        self._started = False
        self._last_unwrapped = seq
        self._concealed.clear()
        self._consecutive_stale = 0
        self.stats.resets += 1

    def receive(self, pkt: FramePacket) -> list[AudioBuffer]:
        """Absorb one packet; return zero or more in-order audio buffers."""
        self.stats.received += 1
        unwrapped = self._unwrap(pkt.sequence)
        if self._last_unwrapped is not None and abs(
            unwrapped - self._last_unwrapped
        ) > self.reset_threshold:
            self._reset(pkt.sequence)
            unwrapped = pkt.sequence
        if self._last_unwrapped is None:
            self._last_unwrapped = unwrapped
        else:
            self._last_unwrapped = max(self._last_unwrapped, unwrapped)

        if self._next_emit is not None and unwrapped < self._next_emit:
            # stale: the slot has already been played out. A lone straggler is
            # late (its slot was concealed) or a duplicate (already delivered);
            # a run of them means the sender restarted nearby.
            if unwrapped in self._concealed:
                self.stats.late += 1
                self._concealed.discard(unwrapped)
            else:
                self.stats.duplicated += 1
            self._consecutive_stale += 1
            if self._consecutive_stale >= self.reset_after_late:
                self._reset(pkt.sequence)
                unwrapped = pkt.sequence
            else:
                return []
        if unwrapped in self._pending:
            self.stats.duplicated += 1
            return []
        self._consecutive_stale = 0
        self._pending[unwrapped] = pkt

        if not self._started:
            if len(self._pending) < self.depth:
                return []
            self._started = True
            self._next_emit = min(self._pending)
        return self._drain()

    def _drain(self) -> list[AudioBuffer]:
        out: list[AudioBuffer] = []
        while self._pending:
            assert self._next_emit is not None
            if self._next_emit in self._pending:
                out.append(self._emit(self._pending.pop(self._next_emit)))
                self._next_emit += 1
            elif max(self._pending) - self._next_emit > self.reorder_window:
                out.append(self._conceal(self._next_emit))
                self.stats.lost += 1
                self._next_emit += 1
            else:
                break
        return out

    def _emit(self, pkt: FramePacket) -> AudioBuffer:
        return decode_frame(pkt, self.buffer_samples, self.sample_rate_hz)

    def _conceal(self, unwrapped_seq: int) -> AudioBuffer:
        self._concealed.add(unwrapped_seq)
        if len(self._concealed) > 4096:
            horizon = (self._next_emit or 0) - self.reset_threshold
            self._concealed = {s for s in self._concealed if s >= horizon}
        zeros = np.zeros(self.buffer_samples)
        return AudioBuffer(
            samples_piezo=zeros,
            samples_mems=zeros.copy(),
            sample_rate_hz=self.sample_rate_hz,
            frame_index=unwrapped_seq,
        )

    def flush(self) -> list[AudioBuffer]:
        """Emit everything pending at end of stream, concealing interior gaps."""
        out: list[AudioBuffer] = []
        if not self._pending:
            return out
        if self._next_emit is None:
            self._next_emit = min(self._pending)
            self._started = True
        last = max(self._pending)
        while self._next_emit <= last:
            if self._next_emit in self._pending:
                out.append(self._emit(self._pending.pop(self._next_emit)))
            else:
                out.append(self._conceal(self._next_emit))
                self.stats.lost += 1
            self._next_emit += 1
        return out


def impair(
    packets,
    *,
    loss_rate: float = 0.0,
    reorder_prob: float = 0.0,
    jitter_ms: float = 0.0,
    seed: int = 0,
    buffer_duration_ms: float = 512 / 48,
) -> list[FramePacket]:
    """Deterministic channel impairment for tests and offline simulation.

    Drops packets with probability loss_rate, adds uniform arrival jitter up
    to jitter_ms (reordering packets whose jittered arrival times cross), and
    additionally swaps adjacent survivors with probability reorder_prob.
    """
    if not 0.0 <= loss_rate <= 1.0 or not 0.0 <= reorder_prob <= 1.0:
        raise ValueError("loss_rate and reorder_prob must be within [0, 1]")
    rng = np.random.default_rng(seed)
    survivors = []
    for i, pkt in enumerate(packets):
        send_time = i * buffer_duration_ms
        if rng.random() < loss_rate:
            continue
        arrival = send_time + (rng.uniform(0.0, jitter_ms) if jitter_ms > 0 else 0.0)
        survivors.append((arrival, len(survivors), pkt))
    survivors.sort(key=lambda t: (t[0], t[1]))
    out = [pkt for _, _, pkt in survivors]
    i = 0
    while i < len(out) - 1:
        if rng.random() < reorder_prob:
            out[i], out[i + 1] = out[i + 1], out[i]
            i += 2
        else:
            i += 1
    return out


class UdpSender:
    """Paces audio buffers onto the wire at a configurable multiple of real time."""

    def __init__(self, host: str, port: int, codec=None) -> None:
        self.addr = (host, port)
        self.codec = codec or CODECS["passthrough"]
        try:
            self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        except OSError as exc:
            raise NetworkError(f"cannot open UDP socket: {exc}") from exc
        self._sequence = 0

    def send_buffer(self, buf: AudioBuffer) -> None:
        pkt = encode_frame(buf, self.codec, self._sequence)
        try:
            self._sock.sendto(pkt.to_bytes(), self.addr)
        except OSError as exc:
            raise NetworkError(f"send to {self.addr[0]}:{self.addr[1]} failed: {exc}") from exc
        self._sequence += 1

    def send_stream(self, buffers, *, pace: float = 1.0) -> int:
        """Send a buffer iterable; pace=1.0 is real time, 0 is flat out."""
        count = 0
        for buf in buffers:
            self.send_buffer(buf)
            count += 1
            if pace > 0:
                time.sleep(buf.duration_s * pace)
        return count

    def close(self) -> None:
        self._sock.close()


class UdpReceiver:
    """Socket intake feeding a jitter buffer; yields in-order audio buffers."""

    def __init__(
        self,
        host: str,
        port: int,
        *,
        buffer_samples: int = 512,
        sample_rate_hz: int = 48000,
        depth: int = 2,
        reorder_window: int = 4,
        recv_buffer_bytes: int = 1 << 22,
    ) -> None:
        try:
            self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, recv_buffer_bytes)
            self._sock.bind((host, port))
        except OSError as exc:
            raise NetworkError(f"cannot bind {host}:{port}: {exc}") from exc
        self.jitter = JitterBuffer(
            depth=depth,
            reorder_window=reorder_window,
            buffer_samples=buffer_samples,
            sample_rate_hz=sample_rate_hz,
        )

    @property
    def port(self) -> int:
        return self._sock.getsockname()[1]

    @property
    def stats(self) -> TransportStats:
        return self.jitter.stats

    def receive(self, *, timeout_s: float = 1.0):
        """Yield in-order audio buffers until timeout_s passes with no traffic."""
        self._sock.settimeout(timeout_s)
        while True:
            try:
                data, _ = self._sock.recvfrom(65536)
            except socket.timeout:
                yield from self.jitter.flush()
                return
            try:
                pkt = FramePacket.from_bytes(data)
            except PacketError:
                self.jitter.stats.malformed += 1
                continue
            yield from self.jitter.receive(pkt)

    def close(self) -> None:
        self._sock.close()
