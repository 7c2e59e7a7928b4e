# Signal front-end package
