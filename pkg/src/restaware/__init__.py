"""Contactless sleep monitoring on (simulated) 24 GHz radar frames."""
from .codec import BodyMovement, Heartbeat, Presence, PresenceState, crc16, decode_stream, encode_frame
from .simulator import PostureLabel, ScenarioScript, Segment, default_protocol_script, generate_session

__all__ = [
    "BodyMovement",
    "Heartbeat",
    "Presence",
    "PresenceState",
    "PostureLabel",
    "ScenarioScript",
    "Segment",
    "crc16",
    "decode_stream",
    "default_protocol_script",
    "encode_frame",
    "generate_session",
]
__version__ = "0.1.0"
