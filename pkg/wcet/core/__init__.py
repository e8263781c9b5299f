# wcet.core package
# Model language, zones and shared records
