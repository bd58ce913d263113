"""
Sampler step rules in coefficient form and trajectory rollout.
"""
