"""Numerical laboratory for affine and perturbed abelian-by-cyclic actions on tori."""
__version__ = "0.1.0"
