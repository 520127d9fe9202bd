"""Test package for fracdiff."""
