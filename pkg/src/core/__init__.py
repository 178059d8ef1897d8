"""
Módulo Core del laboratorio NTK: redes, kernels y experimentos
"""
