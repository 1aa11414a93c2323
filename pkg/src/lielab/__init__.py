"""Product sets and Haar measure on compact Lie groups."""

__version__ = "0.1.0"
