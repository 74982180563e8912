"""
Semantic Inpainting Lab - Source Package
"""
