"""Exception hierarchy. Every error carries a stable ``code`` string."""


class DLTReportError(Exception):
    code = "ERROR"

    def __init__(self, code: str, message: str = ""):
        self.code = code
        self.message = message or code
        super().__init__(f"{code}: {self.message}" if message else code)


class LedgerError(DLTReportError):
    pass


class RegistryError(DLTReportError):
    pass


class RegistryUnavailable(RegistryError):
    def __init__(self, message: str = "registry is offline"):
        super().__init__("REGISTRY_UNAVAILABLE", message)


class ComposerError(DLTReportError):
    pass


class TemplateError(DLTReportError):
    """Template parse/validation failure; ``position`` is a character offset when known."""

    def __init__(self, code: str, message: str = "", position: int | None = None):
        self.position = position
        if position is not None:
            message = f"{message} (at offset {position})"
        super().__init__(code, message)


class WarehouseError(DLTReportError):
    pass
