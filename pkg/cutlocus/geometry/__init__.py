"""Metric, geodesic flow and focal point analysis.
"""
