"""degkdv: a numerical laboratory for the degenerate dispersive KdV equation

    u_t + (u (u u_x)_x + mu u^3)_x = 0,  mu in {-1, 0, +1}.

The package covers the equation's three equivalent formulations (Eulerian u,
Lagrangian Z, flattened W), its compacton solution families, the coordinate
changes and weighted norms that link them, parabolically regularized
evolution, ray tracing for the degenerate dispersion, and conservation and
virial diagnostics.
"""

__version__ = "0.1.0"
