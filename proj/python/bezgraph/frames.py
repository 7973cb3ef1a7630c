"""Decoder for the length-delimited frame stream: b"<len>\\n<json>\\n"."""

import json


class FrameDecoder:
    """Incremental decoder; feed arbitrary byte chunks, get whole messages."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, chunk):
        self._buf += chunk
        out = []
        while True:
            nl = self._buf.find(b"\n")
            if nl < 0:
                break
            length = int(self._buf[:nl])
            end = nl + 1 + length
            if len(self._buf) < end + 1:
                break
            if self._buf[end] != ord("\n"):
                raise ValueError("frame stream: missing terminator")
            out.append(json.loads(self._buf[nl + 1:end]))
            del self._buf[:end + 1]
        return out

    @property
    def pending(self):
        return len(self._buf)


def decode_frames(data):
    dec = FrameDecoder()
    msgs = dec.feed(data)
    if dec.pending:
        raise ValueError("frame stream: truncated message")
    return msgs
