"""EVM-Fusion: multi-path Vision Mamba classifier with neural algorithmic fusion.

Everything runs on the package's own numpy tensor engine (:mod:`evmfusion.engine`).
"""
__version__ = "0.1.0"
