# Paquete utils del laboratorio NTK
