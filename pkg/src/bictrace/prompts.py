"""Access to the shipped prompt template."""

from importlib import resources


def default_template() -> str:
    """The investigation system-prompt template shipped with the package."""
    return (
        resources.files("bictrace").joinpath("assets/investigation_prompt.txt").read_text()
    )
