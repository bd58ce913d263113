"""
Group-relative policy optimisation over sampler trajectories.
"""
