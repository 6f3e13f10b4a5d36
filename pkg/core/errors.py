"""Exception types shared by the planner modules.

Two families: ``InputError`` for anything wrong with what the caller handed
in (maps, parameters, config files) and ``PlannerError`` for inputs that are
valid but have no solution. The CLI maps them to exit codes 3 and 2.
"""


class InputError(ValueError):
    """Base class for invalid input."""


class MalformedInputError(InputError):
    pass


class OutOfBoundsError(InputError):
    pass


class ParameterError(InputError):
    pass


class DegenerateInputError(InputError):
    pass


class ConfigError(InputError):
    pass


class VesselConfigError(InputError):
    pass


class ConstructionError(InputError):
    pass


class MapParseError(InputError):
    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        self.message = message
        where = f"{self.path}:{line_no}" if line_no else self.path
        super().__init__(f"{where}: {message}")


class PlannerError(RuntimeError):
    """Base class for planning failures on valid input."""


class NoPathError(PlannerError):
    def __init__(self, start_idx, goal_idx, component_size):
        self.start_idx = start_idx
        self.goal_idx = goal_idx
        self.component_size = component_size
        super().__init__(
            f"No path from node {start_idx} to node {goal_idx}: "
            f"the start component holds only {component_size} node(s)"
        )


class UnreachableEndpointError(PlannerError):
    pass


class WarmStartInvalidError(PlannerError):
    pass
