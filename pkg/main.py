#!/usr/bin/env python3
"""
Punto de entrada principal del laboratorio NTK
"""

import sys
from pathlib import Path

# Añadir la raíz del proyecto al path para importaciones
sys.path.insert(0, str(Path(__file__).parent))

from src.cli.main import main

if __name__ == "__main__":
    sys.exit(main())
