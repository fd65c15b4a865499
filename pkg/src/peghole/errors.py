class PipelineError(RuntimeError):
    """A pipeline stage could not produce usable output.

    ``stage`` names the failing step and ``category`` is a stable, machine
    readable label used in trial records and CLI exit messages.
    """

    category = "pipeline"

    def __init__(self, stage: str, msg: str):
        super().__init__(msg)
        self.stage = stage
        self.msg = msg

    def __str__(self) -> str:
        return f"[{self.stage}] {self.msg}"


class ContactLossError(PipelineError):
    category = "contact_loss"


class UnusableObservationError(PipelineError):
    category = "unusable_observation"


class RegistrationError(PipelineError):
    category = "registration"
