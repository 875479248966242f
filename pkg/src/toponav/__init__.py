"""Topological navigation over a graph of local occupancy grids, with a global-grid baseline."""
