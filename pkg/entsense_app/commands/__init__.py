from entsense_app.commands import bath, deer, localize, maps, sensitivity, spectrum

COMMANDS = (spectrum, deer, maps, bath, localize, sensitivity)


def register_commands(subparsers):
    for command in COMMANDS:
        command.register(subparsers)
