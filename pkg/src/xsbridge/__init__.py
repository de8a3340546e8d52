"""Motion-capture datagram streaming to robot-middleware messages and URDF."""

__version__ = "0.1.0"
