"""
Numerical services: meshes, linear algebra, assembly, fractional powers and time schemes.
"""
