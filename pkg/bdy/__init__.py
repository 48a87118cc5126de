"""BDY money-exchange game with probabilistic cheaters - simulation and analysis."""
