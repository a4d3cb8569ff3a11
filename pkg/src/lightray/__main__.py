from .cli_io import main

main()
