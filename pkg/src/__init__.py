# Paquete src del laboratorio NTK
