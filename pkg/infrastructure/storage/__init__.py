"""
File-backed storage: INI experiment configs, binary MLP models, CSV/JSON artifacts.
"""
