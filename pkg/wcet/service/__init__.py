# wcet.service package
# Exploration, acceleration, simulation and the CLI
