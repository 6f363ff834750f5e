"""Verification lab for Abelian quantum double models."""
