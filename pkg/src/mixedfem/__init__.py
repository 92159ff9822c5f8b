"""Mixed finite elements for small-strain plasticity."""
