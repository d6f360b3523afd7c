import importlib.util
import sys

CLI_MODULES = ("typer", "rich")


def missing_cli_modules() -> list[str]:
    return [name for name in CLI_MODULES if importlib.util.find_spec(name) is None]


def main() -> None:
    missing = missing_cli_modules()
    if missing:
        print(
            f"CLI dependencies missing ({', '.join(missing)}). "
            "Use: uv tool install 'mdframe[cli]'",
            file=sys.stderr,
        )
        raise SystemExit(2)

    from mdframe import cli

    cli.main()
