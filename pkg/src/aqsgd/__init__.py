"""Adaptive gradient quantization toolkit."""
