from .monolithic import run_training
from .session import (PeerAborted, ProtocolDesync, ProtocolError, Role, RoleMismatch, SessionAborted,
                      SessionState, boundary_after, run_split_training, split_index)
from .transport import (PipeTransport, SocketTransport, TransportClosed, connect, listen, parse_address, pipe_pair,
                        socket_pair)
from .wire import (BadCrc, BadDtype, BadMagic, BadVersion, FrameError, MsgType, Truncated, UnknownMsgType,
                   WireFrame, decode_frame, encode_frame, read_frame)
