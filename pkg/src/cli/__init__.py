# Front-end de línea de comandos del laboratorio NTK
