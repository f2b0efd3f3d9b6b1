"""Periodic homogenization of scalar oscillatory ODEs."""
