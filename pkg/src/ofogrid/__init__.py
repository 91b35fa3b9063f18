"""Online feedback optimization of battery storage for feeder voltage control."""
