"""
File repositories for meshes and experiment output.
"""
