"""Node-classification training stack with information, smoothness and
gradient-consistency objectives over GCN/GAT/GCNII backbones."""

__version__ = "0.1.0"
