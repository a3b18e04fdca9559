"""Tests package for the EnvCF super-resolution toolkit."""
