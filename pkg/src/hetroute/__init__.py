"""Min-max multi-agent routing on heterogeneous terrain, plus an
exploration simulator driven by the same solver stack."""

__version__ = "0.1.0"
