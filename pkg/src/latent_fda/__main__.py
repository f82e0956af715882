"""Entrypoint module, in case you use `python -m latent_fda`."""

from .cli import main

if __name__ == "__main__":
    main()
