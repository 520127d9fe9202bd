"""
fracdiff application package.

Groups configuration, numerical services, file repositories and the command
line under one namespace.
"""
