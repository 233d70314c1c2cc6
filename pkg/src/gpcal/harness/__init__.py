"""Configuration, pipeline and command line for the nozzle calibration studies."""
