"""Allow ``python -m mdframe``."""

from mdframe._cli_entry import main

if __name__ == "__main__":
    main()
