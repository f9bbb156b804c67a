# glc-codec: learned lossless image compression
__version__ = "0.1.0"
