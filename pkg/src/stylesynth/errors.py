"""Exception hierarchy shared by the library and the CLI."""


class StyleSynthError(Exception):
    """Base class. ``exit_code`` is what the CLI returns for this failure."""

    exit_code = 1

    def __init__(self, message, stage=None, path=None):
        self.stage = stage
        self.path = path
        prefix = ""
        if stage:
            prefix += f"[{stage}] "
        if path:
            message = f"{message} ({path})"
        super().__init__(prefix + message)


class ConfigError(StyleSynthError, ValueError):
    exit_code = 2


class MissingInputError(StyleSynthError, FileNotFoundError):
    exit_code = 3


class LLMError(StyleSynthError):
    exit_code = 4


class DivergenceError(StyleSynthError, FloatingPointError):
    exit_code = 5


class DegenerateInputError(StyleSynthError, ValueError):
    """Input has no dispersion (e.g. identical features fed to silhouette)."""

    exit_code = 6
