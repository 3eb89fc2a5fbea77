"""Security-testing harness for 5G industrial UEs: control-plane conformance and TLS posture."""

__version__ = "0.1.0"
