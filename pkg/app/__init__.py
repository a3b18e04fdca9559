"""EnvCF Super-Resolution Toolkit."""

__version__ = "1.0.0"
