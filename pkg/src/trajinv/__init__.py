"""Inverse trajectory solving: grid baking, baseline lookup and a from-scratch MLP."""
