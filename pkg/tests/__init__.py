"""
Semantic Inpainting Lab - Tests Package
"""
