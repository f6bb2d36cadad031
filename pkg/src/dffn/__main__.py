from dffn.cli import main

main()
