# Protocol, simulation and audit logic
